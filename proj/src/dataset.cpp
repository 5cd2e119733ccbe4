#include "bpae/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "bpae/binio.hpp"
#include "bpae/rng.hpp"

namespace fs = std::filesystem;

namespace bpae::dataset {

using binio::put_f32;
using binio::put_u32;
using binio::put_u64;
using binio::Reader;
using binio::slurp;
using binio::spill;

namespace {

constexpr char kStoreMagic[4] = {'B', 'P', 'S', '1'};
constexpr std::uint32_t kStoreVersion = 1;

} // namespace

bool SegmentStore::has_channel(Channel c) const {
    return std::find(channels.begin(), channels.end(), c) != channels.end();
}

std::size_t SegmentStore::channel_index(Channel c) const {
    const auto it = std::find(channels.begin(), channels.end(), c);
    if (it == channels.end())
        throw IncompatibleError(std::string("store is missing channel ") + signal::channel_name(c));
    return static_cast<std::size_t>(it - channels.begin());
}

signal::SignalSegment SegmentStore::segment(std::size_t seg, Channel c, double fs) const {
    const std::size_t ci = channel_index(c);
    signal::SignalSegment s;
    s.samples.assign(row(seg, ci), row(seg, ci) + segment_length);
    s.fs = fs;
    s.channel = c;
    s.units = (c == Channel::ABP) ? signal::Units::MmHg : signal::Units::Normalized;
    return s;
}

SegmentStore SegmentStore::subset(const std::vector<std::size_t>& positions) const {
    SegmentStore out;
    out.segment_length = segment_length;
    out.channels = channels;
    out.samples.reserve(positions.size() * channels.size() * segment_length);
    out.ids.reserve(positions.size());
    for (std::size_t p : positions) {
        if (p >= ids.size()) throw InvalidArgument("subset: position out of range");
        const float* base = samples.data() + p * channels.size() * segment_length;
        out.samples.insert(out.samples.end(), base, base + channels.size() * segment_length);
        out.ids.push_back(ids[p]);
    }
    return out;
}

std::uint64_t store_payload_bytes(std::uint64_t n_segments, std::uint64_t n_channels,
                                  std::uint64_t segment_length) {
    return n_segments * n_channels * segment_length * 4;
}

std::uint64_t store_file_bytes(std::uint64_t n_segments, std::uint64_t n_channels,
                               std::uint64_t segment_length) {
    return 4 + 4 + 4 + 4 + 1 + n_channels +
           store_payload_bytes(n_segments, n_channels, segment_length) + 8 * n_segments;
}

SegmentStore read_store(const std::string& path) {
    const std::string bytes = slurp(path);
    Reader r(bytes, path);

    const char* magic = r.take(4);
    if (std::memcmp(magic, kStoreMagic, 4) != 0) throw FormatError(path + ": bad magic");
    const std::uint32_t version = r.u32();
    if (version != kStoreVersion)
        throw FormatError(path + ": unsupported store version " + std::to_string(version));

    SegmentStore store;
    const std::uint32_t n_segments = r.u32();
    store.segment_length = r.u32();
    const std::uint8_t n_channels = r.u8();
    if (store.segment_length == 0 || n_channels == 0)
        throw FormatError(path + ": empty geometry");
    for (std::uint8_t i = 0; i < n_channels; ++i) {
        const std::uint8_t code = r.u8();
        if (code > 4) throw FormatError(path + ": unknown channel code");
        store.channels.push_back(static_cast<Channel>(code));
    }

    const std::uint64_t count =
        static_cast<std::uint64_t>(n_segments) * n_channels * store.segment_length;
    store.samples.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const float v = r.f32();
        if (!std::isfinite(v)) throw FormatError(path + ": non-finite sample");
        store.samples[i] = v;
    }
    store.ids.resize(n_segments);
    for (std::uint32_t i = 0; i < n_segments; ++i) store.ids[i] = r.u64();
    r.expect_end();
    return store;
}

void write_store(const SegmentStore& store, const std::string& path) {
    const std::size_t n = store.ids.size();
    if (store.samples.size() != n * store.channels.size() * store.segment_length)
        throw InvalidArgument("write_store: sample count inconsistent with geometry");
    for (float v : store.samples)
        if (!std::isfinite(v)) throw InvalidArgument("write_store: non-finite sample");

    std::string bytes;
    bytes.reserve(store_file_bytes(n, store.channels.size(), store.segment_length));
    bytes.append(kStoreMagic, 4);
    put_u32(bytes, kStoreVersion);
    put_u32(bytes, static_cast<std::uint32_t>(n));
    put_u32(bytes, store.segment_length);
    bytes.push_back(static_cast<char>(store.channels.size()));
    for (Channel c : store.channels) bytes.push_back(static_cast<char>(c));
    for (float v : store.samples) put_f32(bytes, v);
    for (std::uint64_t id : store.ids) put_u64(bytes, id);
    spill(path, bytes);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    for (auto& s : cells) {
        while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
        while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
    }
    return cells;
}

double parse_double(const std::string& cell, const std::string& where) {
    if (cell.empty()) throw FormatError(where + ": empty numeric cell");
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0' || !std::isfinite(v))
        throw FormatError(where + ": non-numeric cell '" + cell + "'");
    return v;
}

std::uint64_t parse_u64(const std::string& cell, const std::string& where) {
    if (cell.empty()) throw FormatError(where + ": empty id cell");
    char* end = nullptr;
    const unsigned long long v = std::strtoull(cell.c_str(), &end, 10);
    if (end == cell.c_str() || *end != '\0')
        throw FormatError(where + ": non-integer id '" + cell + "'");
    return v;
}

} // namespace

std::vector<LabeledRow> read_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty labels file");
    const auto header = split_csv_line(line);
    const std::vector<std::string> expected = {"id", "subject_id", "sbp", "dbp", "map"};
    if (header != expected) throw FormatError(path + ": labels header must be id,subject_id,sbp,dbp,map");

    std::vector<LabeledRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        const std::string where = path + ":" + std::to_string(lineno);
        if (cells.size() != 5) throw FormatError(where + ": expected 5 cells");
        LabeledRow row;
        row.id = parse_u64(cells[0], where);
        row.label.subject_id = cells[1];
        row.label.sbp = parse_double(cells[2], where);
        row.label.dbp = parse_double(cells[3], where);
        row.label.map = parse_double(cells[4], where);
        if (!(row.label.sbp > row.label.dbp) || row.label.dbp <= 0.0)
            throw FormatError(where + ": label violates sbp > dbp > 0");
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_labels(const std::vector<LabeledRow>& rows, const std::string& path) {
    std::string out = "id,subject_id,sbp,dbp,map\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%llu,%s,%.10g,%.10g,%.10g\n",
                      static_cast<unsigned long long>(r.id), r.label.subject_id.c_str(),
                      r.label.sbp, r.label.dbp, r.label.map);
        out += buf;
    }
    spill(path, out);
}

SplitPlan make_split(const std::vector<std::uint64_t>& ids, double train_frac, double val_frac,
                     std::uint64_t seed) {
    if (ids.empty()) throw InvalidArgument("make_split: empty id list");
    if (train_frac < 0.0 || train_frac > 1.0 || val_frac < 0.0 || val_frac >= 1.0)
        throw InvalidArgument("make_split: fractions out of range");

    std::vector<std::uint64_t> shuffled = ids;
    Rng rng(seed);
    rng.shuffle(shuffled);

    const std::size_t n = shuffled.size();
    const std::size_t n_trainval = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    const std::size_t n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n_trainval)));

    SplitPlan plan;
    plan.seed = seed;
    plan.train_ids.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(n_trainval - n_val));
    plan.val_ids.assign(shuffled.begin() + static_cast<long>(n_trainval - n_val),
                        shuffled.begin() + static_cast<long>(n_trainval));
    plan.test_ids.assign(shuffled.begin() + static_cast<long>(n_trainval), shuffled.end());
    return plan;
}

FoldPlan make_folds(const std::vector<std::uint64_t>& ids, int k, std::uint64_t seed) {
    if (ids.empty()) throw InvalidArgument("make_folds: empty id list");
    if (k < 2) throw InvalidArgument("make_folds: k must be >= 2");
    if (static_cast<std::size_t>(k) > ids.size())
        throw InvalidArgument("make_folds: k exceeds id count");

    std::vector<std::uint64_t> shuffled = ids;
    Rng rng(seed);
    rng.shuffle(shuffled);

    FoldPlan plan;
    plan.seed = seed;
    const std::size_t q = shuffled.size() / static_cast<std::size_t>(k);
    const std::size_t r = shuffled.size() % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (int f = 0; f < k; ++f) {
        const std::size_t sz = q + (static_cast<std::size_t>(f) < r ? 1 : 0);
        plan.folds.emplace_back(shuffled.begin() + static_cast<long>(pos),
                                shuffled.begin() + static_cast<long>(pos + sz));
        pos += sz;
    }
    return plan;
}

namespace {

// Even (index-folding) extension: record-boundary margins mirror real pulses
// instead of inverting them, which keeps the moving-minimum baseline honest.
double reflect_sample(const std::vector<double>& x, long i) {
    const long n = static_cast<long>(x.size());
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return x[static_cast<std::size_t>(i)];
}

struct RawRecord {
    std::vector<double> ppg, ecg, abp;
    std::string subject_id;
};

RawRecord read_record_csv(const std::string& path, const IngestOptions& opts) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty file");
    const auto header = split_csv_line(line);

    const auto col_of = [&](Channel c) -> std::size_t {
        const auto it = opts.column_of.find(c);
        if (it == opts.column_of.end())
            throw InvalidArgument(std::string("ingest: no column mapped for channel ") +
                                  signal::channel_name(c));
        const auto h = std::find(header.begin(), header.end(), it->second);
        if (h == header.end())
            throw FormatError(path + ": missing column '" + it->second + "'");
        return static_cast<std::size_t>(h - header.begin());
    };
    const std::size_t ppg_col = col_of(Channel::PPG);
    const std::size_t ecg_col = col_of(Channel::ECG);
    const std::size_t abp_col = col_of(Channel::ABP);

    RawRecord rec;
    rec.subject_id = fs::path(path).stem().string();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        const std::string where = path + ":" + std::to_string(lineno);
        const std::size_t need = std::max({ppg_col, ecg_col, abp_col}) + 1;
        if (cells.size() < need) throw FormatError(where + ": too few cells");
        rec.ppg.push_back(parse_double(cells[ppg_col], where + ":" + std::to_string(ppg_col + 1)));
        rec.ecg.push_back(parse_double(cells[ecg_col], where + ":" + std::to_string(ecg_col + 1)));
        rec.abp.push_back(parse_double(cells[abp_col], where + ":" + std::to_string(abp_col + 1)));
    }
    return rec;
}

} // namespace

std::vector<RawWindow> ingest_csv(const std::string& path, const IngestOptions& opts) {
    if (opts.fs != 125.0 && opts.fs != 1000.0)
        throw InvalidArgument("ingest: fs must be 125 or 1000");

    std::vector<std::string> files;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path)) {
            if (e.is_regular_file() && e.path().extension() == ".csv")
                files.push_back(e.path().string());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw InvalidArgument("ingest: no .csv files in " + path);
    } else {
        files.push_back(path);
    }

    std::vector<RawWindow> windows;
    std::uint64_t next_id = 0;
    for (const auto& file : files) {
        RawRecord rec = read_record_csv(file, opts);
        if (opts.fs == 1000.0) {
            if (rec.ppg.size() >= 8) {
                rec.ppg = signal::resample_to_125(rec.ppg);
                rec.ecg = signal::resample_to_125(rec.ecg);
                rec.abp = signal::resample_to_125(rec.abp);
            } else {
                rec.ppg.clear();
            }
        }
        if (opts.abp_in_volts)
            for (double& v : rec.abp) v *= 100.0;

        const std::size_t L = opts.core_length;
        const std::size_t n_windows = rec.ppg.size() / L; // incomplete tail dropped
        for (std::size_t w = 0; w < n_windows; ++w) {
            RawWindow win;
            win.core_offset = opts.margin;
            win.core_length = L;
            win.id = next_id++;
            win.subject_id = rec.subject_id;
            const long lo = static_cast<long>(w * L) - static_cast<long>(opts.margin);
            const long hi = static_cast<long>((w + 1) * L + opts.margin);
            win.edge_padded = lo < 0 || hi > static_cast<long>(rec.ppg.size());
            win.ppg.reserve(static_cast<std::size_t>(hi - lo));
            for (long i = lo; i < hi; ++i) {
                win.ppg.push_back(reflect_sample(rec.ppg, i));
                win.ecg.push_back(reflect_sample(rec.ecg, i));
                win.abp.push_back(reflect_sample(rec.abp, i));
            }
            windows.push_back(std::move(win));
        }
    }
    return windows;
}

namespace {

// Sum of per-cycle Gaussian bumps with grid-aligned centers.
void add_pulses(std::vector<double>& y, double t0, double period, double sigma, double amp,
                double center_shift) {
    const long n = static_cast<long>(y.size());
    const double reach = 6.0 * sigma;
    for (double c = t0 + center_shift; c - reach < static_cast<double>(n); c += period) {
        const double cc = std::round(c);
        if (cc + reach < 0) continue;
        const long lo = std::max(0L, static_cast<long>(std::floor(cc - reach)));
        const long hi = std::min(n - 1, static_cast<long>(std::ceil(cc + reach)));
        for (long i = lo; i <= hi; ++i) {
            const double d = (static_cast<double>(i) - cc) / sigma;
            y[static_cast<std::size_t>(i)] += amp * std::exp(-0.5 * d * d);
        }
    }
}

} // namespace

SynthResult synth_generate(std::size_t n, std::uint64_t seed, const SynthOptions& opts) {
    if (n == 0) throw InvalidArgument("synth_generate: n must be positive");
    if (opts.sbp_lo >= opts.sbp_hi || opts.dbp_lo >= opts.dbp_hi)
        throw InvalidArgument("synth_generate: empty BP range");

    const signal::FilterSpec filt = signal::design_bandpass(opts.fs, 0.5, 8.0, 65);
    const std::size_t margin = 2 * (1 + static_cast<std::size_t>(filt.group_delay_samples));
    const std::size_t L = opts.segment_length;
    const std::size_t ext = L + 2 * margin;

    SynthResult out;
    out.store.segment_length = static_cast<std::uint32_t>(L);
    out.store.channels = {Channel::PPG, Channel::VPG, Channel::APG, Channel::ECG, Channel::ABP};
    out.store.samples.reserve(n * 5 * L);

    Rng rng(seed);
    const quality::ScreenConfig screen_cfg;

    for (std::size_t inst = 0; inst < n; ++inst) {
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 20)
                throw Error(ErrorKind::Internal, "synth_generate: could not satisfy screening gates");

            double sbp = rng.uniform(opts.sbp_lo, opts.sbp_hi);
            double dbp = rng.uniform(opts.dbp_lo, opts.dbp_hi);
            const double pp = sbp - dbp;
            if (pp < 25.0 || pp > 115.0) continue;

            const double hr = rng.uniform(50.0, 100.0);
            const double period = 60.0 / hr * opts.fs;
            const double t0 = rng.uniform(0.0, period);

            const double u = (sbp - opts.sbp_lo) / (opts.sbp_hi - opts.sbp_lo);
            const double v = (dbp - opts.dbp_lo) / (opts.dbp_hi - opts.dbp_lo);

            // PPG morphology carries the BP information: dicrotic amplitude
            // tracks SBP, pulse width tracks DBP.
            std::vector<double> ppg(ext, 0.0);
            const double sig1 = (0.06 + 0.06 * v) * period;
            add_pulses(ppg, t0 + static_cast<double>(margin), period, sig1, 1.0, 0.0);
            add_pulses(ppg, t0 + static_cast<double>(margin), period, 0.10 * period,
                       0.15 + 0.75 * u, 0.30 * period);

            // ABP shape from the same latent parameters; pulses stay narrow
            // enough that sampled extrema sit within a fraction of a mmHg of
            // SBP/DBP.
            std::vector<double> abp_shape(ext, 0.0);
            const double siga = (0.07 + 0.04 * u) * period;
            add_pulses(abp_shape, t0 + static_cast<double>(margin), period, siga, 1.0, 0.0);
            add_pulses(abp_shape, t0 + static_cast<double>(margin), period, 0.08 * period,
                       0.20 + 0.20 * u, 0.28 * period);

            // R wave leads each PPG pulse by a transit delay that shrinks as
            // SBP rises, mirroring the pulse-transit-time relationship.
            std::vector<double> ecg(ext, 0.0);
            const double ptt = (0.22 - 0.08 * u) * period;
            add_pulses(ecg, t0 + static_cast<double>(margin), period, 0.015 * period, 1.0, -ptt);
            add_pulses(ecg, t0 + static_cast<double>(margin), period, 0.04 * period, 0.2,
                       -ptt + 0.23 * period);

            signal::SignalSegment ppg_ext;
            ppg_ext.samples = ppg;
            ppg_ext.fs = opts.fs;
            ppg_ext.channel = Channel::PPG;
            const signal::DerivativePair deriv = signal::derivative_chain(ppg_ext, filt, L);

            const auto core = [&](const std::vector<double>& x) {
                return std::vector<double>(x.begin() + static_cast<long>(margin),
                                           x.begin() + static_cast<long>(margin + L));
            };

            signal::SignalSegment ppg_core;
            ppg_core.samples = core(ppg);
            ppg_core.fs = opts.fs;
            ppg_core.channel = Channel::PPG;
            ppg_core = signal::range_normalize(ppg_core);

            signal::SignalSegment ecg_core;
            ecg_core.samples = core(ecg);
            ecg_core.fs = opts.fs;
            ecg_core.channel = Channel::ECG;
            ecg_core = signal::range_normalize(ecg_core);

            signal::SignalSegment abp_core;
            abp_core.samples = core(abp_shape);
            for (double& s : abp_core.samples) s = dbp + pp * s;
            abp_core.fs = opts.fs;
            abp_core.channel = Channel::ABP;
            abp_core.units = signal::Units::MmHg;

            quality::SegmentLabel label;
            try {
                label = quality::extract_label(abp_core, screen_cfg);
            } catch (const UnlabelableSegment&) {
                continue;
            }
            label.subject_id =
                "S" + std::to_string(inst / static_cast<std::size_t>(opts.subjects_group));

            const std::vector<signal::SignalSegment> chans = {ppg_core, deriv.vpg, deriv.apg,
                                                              ecg_core, abp_core};
            if (!quality::screen_segment(chans, label, screen_cfg).accepted) continue;

            for (const auto& ch : chans)
                for (double s : ch.samples) out.store.samples.push_back(static_cast<float>(s));
            out.store.ids.push_back(inst);
            out.labels.push_back(LabeledRow{inst, label});
            break;
        }
    }
    return out;
}

} // namespace bpae::dataset
