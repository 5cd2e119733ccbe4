#include "bpae/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>

namespace bpae::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

} // namespace

Config::Config() {
    values_ = {
        // reference architecture
        {"unet.depth", "1"},
        {"unet.width", "128"},
        {"unet.kernel", "3"},
        {"unet.channels", "ppg,vpg,apg,ecg"},
        {"unet.features", "1024"},
        {"unet.target", "abp"},
        {"unet.segment_length", "1024"},
        // autoencoder training
        {"train.batch_size", "64"},
        {"train.max_epochs", "100"},
        {"train.patience", "15"},
        {"train.lr", "0.001"},
        {"train.clip_norm", "0"},
        {"train.warmup_steps", "0"},
        // stage-2 regressor
        {"regressor.kind", "mlp"},
        {"mlp.hidden", "100"},
        {"mlp.alpha", "0.0001"},
        {"mlp.lr0", "0.001"},
        {"mlp.max_iter", "500"},
        {"mlp.batch", "0"}, // 0 = auto: min(200, n)
        {"knn.k", "5"},
        {"sgd.lr0", "0.01"},
        // quality screening
        {"screen.sbp_min", "80"},
        {"screen.sbp_max", "190"},
        {"screen.dbp_min", "50"},
        {"screen.dbp_max", "120"},
        {"screen.pp_min", "20"},
        {"screen.pp_max", "120"},
        {"screen.interval_cv_max", "0.25"},
        {"screen.prominence_cv_max", "0.5"},
        {"screen.peak_min_distance", "40"},
        {"screen.peak_min_prominence", "0.3"},
        // preprocessing
        {"baseline.window", "188"},
        {"baseline.order", "4"},
        {"baseline.abp_mode", "preserve_level"},
        {"filter.low_hz", "0.5"},
        {"filter.high_hz", "8"},
        {"filter.taps", "65"},
        // experiment harness
        {"split.train_frac", "0.75"},
        {"split.val_frac", "0.2"},
        {"split.folds", "5"},
        // CSV ingestion
        {"ingest.fs", "125"},
        {"ingest.abp_volts", "0"},
        {"ingest.ppg_col", "ppg"},
        {"ingest.ecg_col", "ecg"},
        {"ingest.abp_col", "abp"},
        // synthetic generator
        {"synth.sbp_lo", "90"},
        {"synth.sbp_hi", "180"},
        {"synth.dbp_lo", "60"},
        {"synth.dbp_hi", "110"},
        {"synth.subjects_group", "4"},
        // evaluation
        {"eval.hist_bin_width", "5"},
    };
}

void Config::set(const std::string& key, const std::string& value) {
    const auto it = values_.find(key);
    if (it == values_.end()) throw InvalidArgument("unknown config key: " + key);
    it->second = trim(value);
}

const std::string& Config::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw InvalidArgument("unknown config key: " + key);
    return it->second;
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

long Config::get_int(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const long x = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw InvalidArgument("config key " + key + " is not an integer: '" + v + "'");
    return x;
}

double Config::get_double(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw InvalidArgument("config key " + key + " is not a number: '" + v + "'");
    return x;
}

bool Config::get_bool(const std::string& key) const {
    const std::string v = lower(get(key));
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw InvalidArgument("config key " + key + " is not a boolean: '" + v + "'");
}

void Config::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t comment = line.find_first_of("#;");
        if (comment != std::string::npos) line.erase(comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw FormatError(path + ":" + std::to_string(lineno) + ": malformed section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string full = section.empty() ? key : section + "." + key;
        try {
            set(full, value);
        } catch (const InvalidArgument& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

std::string Config::dump() const {
    std::string out;
    std::string section;
    for (const auto& [key, value] : values_) {
        const std::size_t dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (!out.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += key.substr(dot + 1) + " = " + value + "\n";
    }
    return out;
}

unet::UNetConfig unet_config(const Config& c) {
    unet::UNetConfig cfg;
    cfg.depth = static_cast<int>(c.get_int("unet.depth"));
    cfg.width = static_cast<int>(c.get_int("unet.width"));
    cfg.kernel = static_cast<int>(c.get_int("unet.kernel"));
    cfg.segment_length = static_cast<std::uint32_t>(c.get_int("unet.segment_length"));
    cfg.n_features = static_cast<std::uint32_t>(c.get_int("unet.features"));
    cfg.target = signal::channel_from_name(c.get("unet.target"));

    cfg.in_channels.clear();
    std::string cur;
    const std::string spec = lower(c.get("unet.channels")) + ",";
    for (char ch : spec) {
        if (ch == ',') {
            if (!trim(cur).empty()) cfg.in_channels.push_back(signal::channel_from_name(trim(cur)));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }

    // The supported predictor sets: PPG alone, PPG+ECG, PPG+VPG+APG, or all four.
    using signal::Channel;
    const std::vector<std::vector<Channel>> allowed = {
        {Channel::PPG},
        {Channel::PPG, Channel::ECG},
        {Channel::PPG, Channel::VPG, Channel::APG},
        {Channel::PPG, Channel::VPG, Channel::APG, Channel::ECG}};
    auto sorted = cfg.in_channels;
    std::sort(sorted.begin(), sorted.end());
    bool ok = false;
    for (auto combo : allowed) {
        std::sort(combo.begin(), combo.end());
        if (combo == sorted) ok = true;
    }
    if (!ok)
        throw InvalidArgument("unet.channels must be one of: ppg | ppg,ecg | ppg,vpg,apg | "
                              "ppg,vpg,apg,ecg");
    cfg.validate();
    return cfg;
}

unet::TrainSpec train_spec(const Config& c) {
    unet::TrainSpec spec;
    spec.batch_size = static_cast<std::size_t>(c.get_int("train.batch_size"));
    spec.max_epochs = static_cast<int>(c.get_int("train.max_epochs"));
    spec.patience = static_cast<int>(c.get_int("train.patience"));
    spec.adam.lr = c.get_double("train.lr");
    spec.clip_norm = c.get_double("train.clip_norm");
    spec.warmup_steps = static_cast<int>(c.get_int("train.warmup_steps"));
    return spec;
}

regress::FitSpec fit_spec(const Config& c, regress::Target target) {
    regress::FitSpec spec;
    spec.kind = regress::kind_from_name(lower(c.get("regressor.kind")));
    spec.target = target;
    spec.hidden = static_cast<std::size_t>(c.get_int("mlp.hidden"));
    spec.alpha = c.get_double("mlp.alpha");
    spec.lr0 = c.get_double("mlp.lr0");
    spec.max_iter = static_cast<int>(c.get_int("mlp.max_iter"));
    spec.batch = static_cast<std::size_t>(c.get_int("mlp.batch"));
    spec.knn_k = static_cast<std::size_t>(c.get_int("knn.k"));
    spec.sgd_lr0 = c.get_double("sgd.lr0");
    return spec;
}

quality::ScreenConfig screen_config(const Config& c) {
    quality::ScreenConfig cfg;
    cfg.sbp_min = c.get_double("screen.sbp_min");
    cfg.sbp_max = c.get_double("screen.sbp_max");
    cfg.dbp_min = c.get_double("screen.dbp_min");
    cfg.dbp_max = c.get_double("screen.dbp_max");
    cfg.pp_min = c.get_double("screen.pp_min");
    cfg.pp_max = c.get_double("screen.pp_max");
    cfg.interval_cv_max = c.get_double("screen.interval_cv_max");
    cfg.prominence_cv_max = c.get_double("screen.prominence_cv_max");
    cfg.peak_min_distance = static_cast<int>(c.get_int("screen.peak_min_distance"));
    cfg.peak_min_prominence = c.get_double("screen.peak_min_prominence");
    return cfg;
}

signal::BaselineConfig baseline_config(const Config& c) {
    signal::BaselineConfig cfg;
    cfg.window_samples = static_cast<int>(c.get_int("baseline.window"));
    cfg.poly_order = static_cast<int>(c.get_int("baseline.order"));
    return cfg;
}

signal::FilterSpec filter_spec(const Config& c) {
    return signal::design_bandpass(125.0, c.get_double("filter.low_hz"),
                                   c.get_double("filter.high_hz"),
                                   static_cast<int>(c.get_int("filter.taps")));
}

dataset::IngestOptions ingest_options(const Config& c) {
    dataset::IngestOptions opts;
    opts.column_of = {{signal::Channel::PPG, c.get("ingest.ppg_col")},
                      {signal::Channel::ECG, c.get("ingest.ecg_col")},
                      {signal::Channel::ABP, c.get("ingest.abp_col")}};
    opts.fs = c.get_double("ingest.fs");
    opts.abp_in_volts = c.get_bool("ingest.abp_volts");
    opts.core_length = static_cast<std::size_t>(c.get_int("unet.segment_length"));
    const signal::FilterSpec filt = filter_spec(c);
    opts.margin = 2 * (1 + static_cast<std::size_t>(filt.group_delay_samples));
    return opts;
}

dataset::SynthOptions synth_options(const Config& c) {
    dataset::SynthOptions opts;
    opts.sbp_lo = c.get_double("synth.sbp_lo");
    opts.sbp_hi = c.get_double("synth.sbp_hi");
    opts.dbp_lo = c.get_double("synth.dbp_lo");
    opts.dbp_hi = c.get_double("synth.dbp_hi");
    opts.segment_length = static_cast<std::size_t>(c.get_int("unet.segment_length"));
    opts.subjects_group = static_cast<int>(c.get_int("synth.subjects_group"));
    return opts;
}

AbpBaselineMode abp_baseline_mode(const Config& c) {
    const std::string v = lower(c.get("baseline.abp_mode"));
    if (v == "preserve_level") return AbpBaselineMode::PreserveLevel;
    if (v == "full") return AbpBaselineMode::Full;
    if (v == "off") return AbpBaselineMode::Off;
    throw InvalidArgument("baseline.abp_mode must be preserve_level, full or off");
}

} // namespace bpae::config
