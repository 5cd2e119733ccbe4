#include "bpae/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include <json.hpp>

#include "bpae/binio.hpp"
#include "bpae/evaluate.hpp"

namespace fs = std::filesystem;

namespace bpae::pipeline {

using dataset::LabeledRow;
using dataset::SegmentStore;
using signal::Channel;
using signal::SignalSegment;

void ensure_writable(const std::string& path, bool force) {
    if (path.empty()) return;
    if (!force && fs::exists(path))
        throw IoError("refusing to overwrite existing " + path + " (use --force)");
}

namespace {

std::vector<double> core_slice(const std::vector<double>& x, std::size_t off, std::size_t len) {
    return std::vector<double>(x.begin() + static_cast<long>(off),
                               x.begin() + static_cast<long>(off + len));
}

SignalSegment make_segment(std::vector<double> samples, Channel ch, double fs,
                           signal::Units units = signal::Units::Normalized) {
    SignalSegment s;
    s.samples = std::move(samples);
    s.fs = fs;
    s.channel = ch;
    s.units = units;
    return s;
}

} // namespace

PreprocessSummary cmd_preprocess(const config::Config& cfg, const std::string& input_path,
                                 const std::string& out_store, const std::string& out_labels,
                                 const std::string& out_report, int threads, bool force) {
    (void)threads; // windows are processed in input order to keep ids stable
    ensure_writable(out_store, force);
    ensure_writable(out_labels, force);
    ensure_writable(out_report, force);

    const dataset::IngestOptions ing = config::ingest_options(cfg);
    const signal::BaselineConfig bcfg = config::baseline_config(cfg);
    const signal::FilterSpec filt = config::filter_spec(cfg);
    const quality::ScreenConfig scfg = config::screen_config(cfg);
    const config::AbpBaselineMode abp_mode = config::abp_baseline_mode(cfg);
    const std::size_t L = ing.core_length;

    const std::vector<dataset::RawWindow> windows = dataset::ingest_csv(input_path, ing);

    SegmentStore store;
    store.segment_length = static_cast<std::uint32_t>(L);
    store.channels = {Channel::PPG, Channel::VPG, Channel::APG, Channel::ECG, Channel::ABP};
    std::vector<LabeledRow> labels;
    std::string report = "segment_id,decision,reason\n";

    PreprocessSummary summary;
    summary.windows = windows.size();
    for (const auto& win : windows) {
        quality::RejectReason reason = quality::RejectReason::None;
        std::vector<SignalSegment> chans;
        quality::SegmentLabel label;
        try {
            SignalSegment ppg_ext = make_segment(win.ppg, Channel::PPG, 125.0);
            SignalSegment ecg_ext = make_segment(win.ecg, Channel::ECG, 125.0);
            SignalSegment abp_ext =
                make_segment(win.abp, Channel::ABP, 125.0, signal::Units::MmHg);

            ppg_ext = signal::correct_baseline(ppg_ext, bcfg);
            ecg_ext = signal::correct_baseline(ecg_ext, bcfg);
            if (abp_mode == config::AbpBaselineMode::PreserveLevel)
                abp_ext = signal::correct_baseline(abp_ext, bcfg, /*preserve_level=*/true);
            else if (abp_mode == config::AbpBaselineMode::Full)
                abp_ext = signal::correct_baseline(abp_ext, bcfg);

            const signal::DerivativePair deriv = signal::derivative_chain(ppg_ext, filt, L);

            SignalSegment ppg_core =
                make_segment(core_slice(ppg_ext.samples, win.core_offset, L), Channel::PPG, 125.0);
            SignalSegment ecg_core =
                make_segment(core_slice(ecg_ext.samples, win.core_offset, L), Channel::ECG, 125.0);
            SignalSegment abp_core =
                make_segment(core_slice(abp_ext.samples, win.core_offset, L), Channel::ABP, 125.0,
                             signal::Units::MmHg);

            ppg_core = signal::range_normalize(ppg_core);
            ecg_core = signal::range_normalize(ecg_core);

            chans = {ppg_core, deriv.vpg, deriv.apg, ecg_core, abp_core};

            // blank gate first so flat channels never reach label extraction
            bool blank = false;
            for (const auto& ch : chans)
                if (signal::nearly_flat(ch.samples)) blank = true;
            if (blank) {
                reason = quality::RejectReason::Blank;
            } else {
                label = quality::extract_label(abp_core, scfg);
                label.subject_id = win.subject_id;
                const quality::ScreenResult res = quality::screen_segment(chans, label, scfg);
                if (!res.accepted) reason = res.reason;
            }
        } catch (const DegenerateSignal&) {
            reason = quality::RejectReason::Blank;
        } catch (const UnlabelableSegment&) {
            reason = quality::RejectReason::Unlabelable;
        }

        if (reason == quality::RejectReason::None) {
            for (const auto& ch : chans)
                for (double v : ch.samples) store.samples.push_back(static_cast<float>(v));
            store.ids.push_back(win.id);
            labels.push_back(LabeledRow{win.id, label});
            report += std::to_string(win.id) + ",accept,\n";
            ++summary.accepted;
        } else {
            report +=
                std::to_string(win.id) + ",reject," + quality::reject_reason_name(reason) + "\n";
        }
    }

    dataset::write_store(store, out_store);
    dataset::write_labels(labels, out_labels);
    binio::spill(out_report, report);
    return summary;
}

void cmd_synth(const config::Config& cfg, std::size_t n, std::uint64_t seed,
               const std::string& out_store, const std::string& out_labels, bool force) {
    ensure_writable(out_store, force);
    ensure_writable(out_labels, force);
    const dataset::SynthResult res = dataset::synth_generate(n, seed, config::synth_options(cfg));
    dataset::write_store(res.store, out_store);
    dataset::write_labels(res.labels, out_labels);
}

namespace {

// Positions of the given ids inside the store (ids must exist).
std::vector<std::size_t> positions_of(const SegmentStore& store,
                                      const std::vector<std::uint64_t>& ids) {
    std::map<std::uint64_t, std::size_t> where;
    for (std::size_t i = 0; i < store.ids.size(); ++i) where[store.ids[i]] = i;
    std::vector<std::size_t> pos;
    pos.reserve(ids.size());
    for (std::uint64_t id : ids) {
        const auto it = where.find(id);
        if (it == where.end())
            throw IncompatibleError("id " + std::to_string(id) + " not present in store");
        pos.push_back(it->second);
    }
    return pos;
}

signal::GlobalNorm abp_norm_of(const SegmentStore& store) {
    const std::size_t ci = store.channel_index(Channel::ABP);
    signal::GlobalNorm g{std::numeric_limits<double>::infinity(),
                         -std::numeric_limits<double>::infinity()};
    for (std::size_t s = 0; s < store.segment_count(); ++s) {
        const float* row = store.row(s, ci);
        for (std::size_t i = 0; i < store.segment_length; ++i) {
            g.gmin = std::min(g.gmin, static_cast<double>(row[i]));
            g.gmax = std::max(g.gmax, static_cast<double>(row[i]));
        }
    }
    if (!(g.gmax > g.gmin)) throw InvalidArgument("ABP channel has degenerate range");
    return g;
}

unet::UNetModel train_model_on(const config::Config& cfg, const SegmentStore& fit_store,
                               const SegmentStore& val_store, std::uint64_t seed, int threads,
                               bool verbose, const signal::GlobalNorm& norm,
                               unet::TrainHistory* history_out) {
    const unet::UNetConfig ucfg = config::unet_config(cfg);
    unet::UNetModel model = unet::init_model(ucfg, seed);
    model.abp_gmin = norm.gmin;
    model.abp_gmax = norm.gmax;

    unet::TrainSpec spec = config::train_spec(cfg);
    spec.seed = seed;
    spec.threads = threads;
    spec.verbose = verbose;

    const unet::TrainData train_data = unet::dataset_from_store(fit_store, model, true);
    const unet::TrainData val_data = unet::dataset_from_store(val_store, model, true);
    const unet::TrainHistory hist = unet::train(model, train_data, val_data, spec);
    if (history_out) *history_out = hist;
    return model;
}

} // namespace

void cmd_train_ae(const config::Config& cfg, const std::string& train_store_path,
                  const std::string& val_store_path, std::uint64_t seed, int threads, bool verbose,
                  const std::string& out_model, const std::string& out_history, bool force) {
    ensure_writable(out_model, force);
    ensure_writable(out_history, force);

    const SegmentStore full = dataset::read_store(train_store_path);
    SegmentStore fit_store, val_store;
    if (!val_store_path.empty()) {
        fit_store = full;
        val_store = dataset::read_store(val_store_path);
    } else {
        // Deterministic validation carve-out from the training store.
        const double val_frac = cfg.get_double("split.val_frac");
        const dataset::SplitPlan plan = dataset::make_split(full.ids, 1.0, val_frac, seed);
        fit_store = full.subset(positions_of(full, plan.train_ids));
        val_store = full.subset(positions_of(full, plan.val_ids));
    }

    const unet::UNetConfig ucfg = config::unet_config(cfg);
    signal::GlobalNorm norm{0.0, 1.0};
    if (ucfg.target == Channel::ABP) norm = abp_norm_of(full);

    unet::TrainHistory hist;
    const unet::UNetModel model =
        train_model_on(cfg, fit_store, val_store, seed, threads, verbose, norm, &hist);
    unet::save_model(model, out_model);
    if (!out_history.empty()) unet::write_history_csv(hist, out_history);
}

void cmd_features(const std::string& model_path, const std::string& store_path, int threads,
                  const std::string& out_features, bool force) {
    ensure_writable(out_features, force);
    const unet::UNetModel model = unet::load_model(model_path);
    const SegmentStore store = dataset::read_store(store_path);
    const unet::FeatureMatrix fm = unet::extract_features(model, store, threads);
    unet::save_features(fm, out_features);
}

namespace {

// Joins feature rows with labels by id, in feature-row order.
void join_features_labels(const unet::FeatureMatrix& fm, const std::vector<LabeledRow>& labels,
                          regress::Target target, std::vector<double>& x, std::vector<double>& y,
                          std::vector<std::string>* subjects) {
    std::map<std::uint64_t, const LabeledRow*> by_id;
    for (const auto& row : labels) by_id[row.id] = &row;
    x.assign(fm.data.begin(), fm.data.end());
    y.resize(fm.rows);
    if (subjects) subjects->resize(fm.rows);
    for (std::size_t i = 0; i < fm.rows; ++i) {
        const auto it = by_id.find(fm.ids[i]);
        if (it == by_id.end())
            throw IncompatibleError("no label for segment id " + std::to_string(fm.ids[i]));
        y[i] = target == regress::Target::Sbp ? it->second->label.sbp : it->second->label.dbp;
        if (subjects) (*subjects)[i] = it->second->label.subject_id;
    }
}

} // namespace

void cmd_train_reg(const config::Config& cfg, const std::string& features_path,
                   const std::string& labels_path, const std::string& target, std::uint64_t seed,
                   const std::string& out_regressor, bool force) {
    ensure_writable(out_regressor, force);
    const unet::FeatureMatrix fm = unet::load_features(features_path);
    const std::vector<LabeledRow> labels = dataset::read_labels(labels_path);
    const regress::Target tgt = regress::target_from_name(target);

    std::vector<double> x, y;
    join_features_labels(fm, labels, tgt, x, y, nullptr);

    regress::FitSpec spec = config::fit_spec(cfg, tgt);
    spec.seed = seed;
    const regress::RegressorModel model = regress::fit(x.data(), fm.rows, fm.cols, y.data(), spec);
    regress::save_regressor(model, out_regressor);
}

void cmd_predict(const std::string& reg_sbp_path, const std::string& reg_dbp_path,
                 const std::string& features_path, const std::string& out_csv, bool force) {
    if (reg_sbp_path.empty() && reg_dbp_path.empty())
        throw InvalidArgument("predict: no regressor given");
    ensure_writable(out_csv, force);
    const unet::FeatureMatrix fm = unet::load_features(features_path);
    std::vector<double> x(fm.data.begin(), fm.data.end());

    std::vector<double> sbp, dbp;
    if (!reg_sbp_path.empty()) {
        const regress::RegressorModel reg = regress::load_regressor(reg_sbp_path);
        if (reg.target != regress::Target::Sbp)
            throw IncompatibleError("regressor " + reg_sbp_path + " does not predict sbp");
        sbp = regress::predict(reg, x.data(), fm.rows, fm.cols);
    }
    if (!reg_dbp_path.empty()) {
        const regress::RegressorModel reg = regress::load_regressor(reg_dbp_path);
        if (reg.target != regress::Target::Dbp)
            throw IncompatibleError("regressor " + reg_dbp_path + " does not predict dbp");
        dbp = regress::predict(reg, x.data(), fm.rows, fm.cols);
    }

    std::string out = "id";
    if (!sbp.empty()) out += ",sbp_pred";
    if (!dbp.empty()) out += ",dbp_pred";
    out += "\n";
    char buf[96];
    for (std::size_t i = 0; i < fm.rows; ++i) {
        out += std::to_string(fm.ids[i]);
        if (!sbp.empty()) {
            std::snprintf(buf, sizeof buf, ",%.10g", sbp[i]);
            out += buf;
        }
        if (!dbp.empty()) {
            std::snprintf(buf, sizeof buf, ",%.10g", dbp[i]);
            out += buf;
        }
        out += "\n";
    }
    binio::spill(out_csv, out);
}

namespace {

struct Predictions {
    std::vector<std::uint64_t> ids;
    std::vector<double> sbp, dbp; // empty when the column is absent
};

Predictions read_predictions(const std::string& path) {
    const std::string bytes = binio::slurp(path);
    Predictions out;
    std::size_t pos = 0, lineno = 0;
    int sbp_col = -1, dbp_col = -1;
    while (pos < bytes.size()) {
        std::size_t end = bytes.find('\n', pos);
        if (end == std::string::npos) end = bytes.size();
        std::string line = bytes.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = end + 1;
        ++lineno;
        if (line.empty()) continue;

        std::vector<std::string> cells;
        std::string cur;
        for (char ch : line + ",") {
            if (ch == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        const std::string where = path + ":" + std::to_string(lineno);
        if (lineno == 1) {
            if (cells.empty() || cells[0] != "id")
                throw FormatError(where + ": predictions header must start with id");
            for (std::size_t c = 1; c < cells.size(); ++c) {
                if (cells[c] == "sbp_pred") sbp_col = static_cast<int>(c);
                else if (cells[c] == "dbp_pred") dbp_col = static_cast<int>(c);
                else throw FormatError(where + ": unknown column " + cells[c]);
            }
            if (sbp_col < 0 && dbp_col < 0)
                throw FormatError(where + ": no prediction columns");
            continue;
        }
        char* endp = nullptr;
        out.ids.push_back(std::strtoull(cells[0].c_str(), &endp, 10));
        if (endp == cells[0].c_str() || *endp != '\0')
            throw FormatError(where + ": bad id " + cells[0]);
        const auto value_at = [&](int col) {
            if (col < 0 || static_cast<std::size_t>(col) >= cells.size())
                throw FormatError(where + ": missing prediction cell");
            char* e = nullptr;
            const double v = std::strtod(cells[static_cast<std::size_t>(col)].c_str(), &e);
            if (e == cells[static_cast<std::size_t>(col)].c_str() || *e != '\0' ||
                !std::isfinite(v))
                throw FormatError(where + ": bad prediction value");
            return v;
        };
        if (sbp_col >= 0) out.sbp.push_back(value_at(sbp_col));
        if (dbp_col >= 0) out.dbp.push_back(value_at(dbp_col));
    }
    if (out.ids.empty()) throw FormatError(path + ": no prediction rows");
    return out;
}

std::vector<eval::TargetReport> evaluate_predictions(const Predictions& preds,
                                                     const std::vector<LabeledRow>& labels,
                                                     double hist_bin_width,
                                                     std::vector<eval::PredictionSet>* sets_out) {
    std::map<std::uint64_t, const LabeledRow*> by_id;
    for (const auto& row : labels) by_id[row.id] = &row;

    std::set<std::string> subjects;
    std::vector<double> truth_sbp, truth_dbp;
    for (std::size_t i = 0; i < preds.ids.size(); ++i) {
        const auto it = by_id.find(preds.ids[i]);
        if (it == by_id.end())
            throw IncompatibleError("no label for predicted id " + std::to_string(preds.ids[i]));
        subjects.insert(it->second->label.subject_id);
        truth_sbp.push_back(it->second->label.sbp);
        truth_dbp.push_back(it->second->label.dbp);
    }

    std::vector<eval::TargetReport> reports;
    std::vector<eval::PredictionSet> sets;
    if (!preds.sbp.empty()) {
        eval::PredictionSet ps;
        ps.truth = truth_sbp;
        ps.pred = preds.sbp;
        ps.target = regress::Target::Sbp;
        ps.n_subjects = subjects.size();
        reports.push_back(eval::evaluate_target(ps, hist_bin_width));
        sets.push_back(std::move(ps));
    }
    if (!preds.dbp.empty()) {
        eval::PredictionSet ps;
        ps.truth = truth_dbp;
        ps.pred = preds.dbp;
        ps.target = regress::Target::Dbp;
        ps.n_subjects = subjects.size();
        reports.push_back(eval::evaluate_target(ps, hist_bin_width));
        sets.push_back(std::move(ps));
    }
    if (sets_out) *sets_out = std::move(sets);
    return reports;
}

} // namespace

void cmd_evaluate(const config::Config& cfg, const std::string& predictions_csv,
                  const std::string& labels_csv, const std::string& out_report,
                  const std::string& plots_dir, bool force) {
    ensure_writable(out_report, force);
    const Predictions preds = read_predictions(predictions_csv);
    const std::vector<LabeledRow> labels = dataset::read_labels(labels_csv);

    std::vector<eval::PredictionSet> sets;
    const std::vector<eval::TargetReport> reports =
        evaluate_predictions(preds, labels, cfg.get_double("eval.hist_bin_width"), &sets);
    binio::spill(out_report, eval::report_to_json(reports));
    if (!plots_dir.empty()) {
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const std::string dir =
                plots_dir + "/" + regress::target_name(reports[i].target);
            eval::write_plot_csvs(reports[i], sets[i], dir);
        }
    }
}

void cmd_stats(const std::string& labels_csv, const std::string& out_json) {
    const std::vector<LabeledRow> rows = dataset::read_labels(labels_csv);
    std::vector<quality::SegmentLabel> labels;
    labels.reserve(rows.size());
    for (const auto& r : rows) labels.push_back(r.label);
    const quality::DatasetStatistics st = quality::dataset_statistics(labels);

    const auto q = [](const quality::QuantityStats& s) {
        return nlohmann::ordered_json{
            {"min", s.min}, {"max", s.max}, {"mean", s.mean}, {"std", s.std}};
    };
    nlohmann::ordered_json j;
    j["n"] = rows.size();
    j["sbp"] = q(st.sbp);
    j["dbp"] = q(st.dbp);
    j["map"] = q(st.map);
    const std::string text = j.dump(2) + "\n";
    if (out_json.empty())
        std::fwrite(text.data(), 1, text.size(), stdout);
    else
        binio::spill(out_json, text);
}

// ---- experiment harness ----------------------------------------------------

namespace {

struct StageResult {
    nlohmann::ordered_json summary;
};

// Train on trainval (with its own validation carve), fit both regressors on
// trainval features, evaluate on test. Writes every stage artifact to dir.
StageResult run_stage(const config::Config& cfg, const SegmentStore& trainval,
                      const std::vector<LabeledRow>& trainval_labels, const SegmentStore& test,
                      const std::vector<LabeledRow>& test_labels, std::uint64_t seed, int threads,
                      bool verbose, const std::string& dir) {
    fs::create_directories(dir);

    const double val_frac = cfg.get_double("split.val_frac");
    const dataset::SplitPlan carve = dataset::make_split(trainval.ids, 1.0, val_frac, seed);
    const SegmentStore fit_store = trainval.subset(positions_of(trainval, carve.train_ids));
    const SegmentStore val_store = trainval.subset(positions_of(trainval, carve.val_ids));

    const unet::UNetConfig ucfg = config::unet_config(cfg);
    signal::GlobalNorm norm{0.0, 1.0};
    if (ucfg.target == Channel::ABP) norm = abp_norm_of(trainval);

    unet::TrainHistory hist;
    const unet::UNetModel model =
        train_model_on(cfg, fit_store, val_store, seed, threads, verbose, norm, &hist);
    unet::save_model(model, dir + "/model.bpun");
    unet::write_history_csv(hist, dir + "/history.csv");

    const unet::FeatureMatrix feat_train = unet::extract_features(model, trainval, threads);
    const unet::FeatureMatrix feat_test = unet::extract_features(model, test, threads);
    unet::save_features(feat_train, dir + "/features_train.bpfm");
    unet::save_features(feat_test, dir + "/features_test.bpfm");

    Predictions preds;
    preds.ids = feat_test.ids;
    nlohmann::ordered_json baselines;
    for (const regress::Target tgt : {regress::Target::Sbp, regress::Target::Dbp}) {
        std::vector<double> x, y;
        join_features_labels(feat_train, trainval_labels, tgt, x, y, nullptr);
        regress::FitSpec spec = config::fit_spec(cfg, tgt);
        spec.seed = seed;
        const regress::RegressorModel reg = regress::fit(x.data(), feat_train.rows,
                                                         feat_train.cols, y.data(), spec);
        const std::string name = regress::target_name(tgt);
        regress::save_regressor(reg, dir + "/reg_" + name + ".bprg");

        std::vector<double> xt(feat_test.data.begin(), feat_test.data.end());
        auto p = regress::predict(reg, xt.data(), feat_test.rows, feat_test.cols);
        if (tgt == regress::Target::Sbp)
            preds.sbp = std::move(p);
        else
            preds.dbp = std::move(p);

        // Predict-the-training-mean reference error on the same test split.
        double mean = 0.0;
        for (double v : y) mean += v;
        mean /= static_cast<double>(y.size());
        std::vector<double> t_truth, t_dummy;
        join_features_labels(feat_test, test_labels, tgt, t_dummy, t_truth, nullptr);
        double base = 0.0;
        for (double v : t_truth) base += std::abs(v - mean);
        baselines[name] = base / static_cast<double>(t_truth.size());
    }

    // predictions.csv in the cmd_predict format
    {
        std::string out = "id,sbp_pred,dbp_pred\n";
        char buf[96];
        for (std::size_t i = 0; i < preds.ids.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%llu,%.10g,%.10g\n",
                          static_cast<unsigned long long>(preds.ids[i]), preds.sbp[i],
                          preds.dbp[i]);
            out += buf;
        }
        binio::spill(dir + "/predictions.csv", out);
    }

    std::vector<eval::PredictionSet> sets;
    const std::vector<eval::TargetReport> reports = evaluate_predictions(
        preds, test_labels, cfg.get_double("eval.hist_bin_width"), &sets);
    binio::spill(dir + "/report.json", eval::report_to_json(reports));
    for (std::size_t i = 0; i < reports.size(); ++i)
        eval::write_plot_csvs(reports[i], sets[i],
                              dir + "/plots/" + regress::target_name(reports[i].target));

    StageResult res;
    res.summary["n_train"] = fit_store.segment_count();
    res.summary["n_val"] = val_store.segment_count();
    res.summary["n_test"] = test.segment_count();
    res.summary["best_epoch"] = hist.best_epoch;
    res.summary["best_val_mae"] = hist.best_val_mae;
    for (const auto& rep : reports) {
        nlohmann::ordered_json t;
        t["mae"] = rep.mae;
        t["baseline_mae"] = baselines[regress::target_name(rep.target)];
        t["me"] = rep.me_std.me;
        t["std"] = rep.me_std.std;
        t["r"] = rep.fit.r;
        t["bhs_grade"] = eval::bhs_grade_name(rep.bhs.grade);
        t["aami_pass"] = rep.aami.pass;
        res.summary[regress::target_name(rep.target)] = t;
    }
    return res;
}

std::vector<LabeledRow> labels_for_ids(const std::vector<LabeledRow>& all,
                                       const std::vector<std::uint64_t>& ids) {
    std::set<std::uint64_t> want(ids.begin(), ids.end());
    std::vector<LabeledRow> out;
    for (const auto& row : all)
        if (want.count(row.id)) out.push_back(row);
    return out;
}

} // namespace

void cmd_experiment(const config::Config& cfg, const std::string& mode,
                    const std::string& store_path, const std::string& labels_path,
                    const std::string& store_b_path, const std::string& labels_b_path,
                    std::uint64_t seed, int threads, bool verbose, const std::string& out_dir,
                    bool force) {
    ensure_writable(out_dir, force);
    fs::create_directories(out_dir);

    const SegmentStore store = dataset::read_store(store_path);
    const std::vector<LabeledRow> labels = dataset::read_labels(labels_path);

    nlohmann::ordered_json summary;
    summary["mode"] = mode;
    summary["seed"] = seed;

    if (mode == "holdout") {
        const double train_frac = cfg.get_double("split.train_frac");
        const dataset::SplitPlan plan = dataset::make_split(store.ids, train_frac, 0.0, seed);
        const SegmentStore trainval = store.subset(positions_of(store, plan.train_ids));
        const SegmentStore test = store.subset(positions_of(store, plan.test_ids));
        const StageResult res =
            run_stage(cfg, trainval, labels_for_ids(labels, plan.train_ids), test,
                      labels_for_ids(labels, plan.test_ids), seed, threads, verbose, out_dir);
        summary.update(res.summary);
    } else if (mode == "cross_dataset") {
        if (store_b_path.empty() || labels_b_path.empty())
            throw InvalidArgument("cross_dataset mode needs a second store and labels");
        const SegmentStore test = dataset::read_store(store_b_path);
        const std::vector<LabeledRow> test_labels = dataset::read_labels(labels_b_path);
        const StageResult res =
            run_stage(cfg, store, labels, test, test_labels, seed, threads, verbose, out_dir);
        summary.update(res.summary);
    } else if (mode == "kfold") {
        const int k = static_cast<int>(cfg.get_int("split.folds"));
        const dataset::FoldPlan plan = dataset::make_folds(store.ids, k, seed);
        nlohmann::ordered_json folds = nlohmann::ordered_json::array();
        std::vector<double> sbp_maes, dbp_maes;
        for (int f = 0; f < k; ++f) {
            std::vector<std::uint64_t> train_ids;
            for (int g = 0; g < k; ++g)
                if (g != f)
                    train_ids.insert(train_ids.end(), plan.folds[static_cast<std::size_t>(g)].begin(),
                                     plan.folds[static_cast<std::size_t>(g)].end());
            const auto& test_ids = plan.folds[static_cast<std::size_t>(f)];
            const SegmentStore trainval = store.subset(positions_of(store, train_ids));
            const SegmentStore test = store.subset(positions_of(store, test_ids));
            const StageResult res = run_stage(
                cfg, trainval, labels_for_ids(labels, train_ids), test,
                labels_for_ids(labels, test_ids), seed + static_cast<std::uint64_t>(f), threads,
                verbose, out_dir + "/fold_" + std::to_string(f));
            nlohmann::ordered_json fold = res.summary;
            fold["fold"] = f;
            folds.push_back(fold);
            sbp_maes.push_back(res.summary["sbp"]["mae"].get<double>());
            dbp_maes.push_back(res.summary["dbp"]["mae"].get<double>());
        }
        const auto mean_std = [](const std::vector<double>& v) {
            double m = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double acc = 0.0;
            for (double x : v) acc += (x - m) * (x - m);
            const double sd =
                v.size() > 1 ? std::sqrt(acc / static_cast<double>(v.size() - 1)) : 0.0;
            return std::pair<double, double>{m, sd};
        };
        const auto [sm, ss] = mean_std(sbp_maes);
        const auto [dm, ds] = mean_std(dbp_maes);
        summary["folds"] = folds;
        summary["aggregate"] = {{"sbp_mae_mean", sm},
                                {"sbp_mae_std", ss},
                                {"dbp_mae_mean", dm},
                                {"dbp_mae_std", ds}};
    } else {
        throw InvalidArgument("unknown experiment mode: " + mode +
                              " (expected holdout, kfold or cross_dataset)");
    }

    binio::spill(out_dir + "/summary.json", summary.dump(2) + "\n");
}

} // namespace bpae::pipeline
