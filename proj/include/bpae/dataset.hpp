#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bpae/quality.hpp"
#include "bpae/signal.hpp"

namespace bpae::dataset {

using signal::Channel;

// In-memory mirror of the BPS1 container: 32-bit float samples ordered
// segment-major then channel-major, one u64 id per segment.
struct SegmentStore {
    std::uint32_t segment_length = 1024;
    std::vector<Channel> channels;
    std::vector<float> samples;
    std::vector<std::uint64_t> ids;

    std::uint32_t segment_count() const {
        return static_cast<std::uint32_t>(ids.size());
    }
    bool has_channel(Channel c) const;
    std::size_t channel_index(Channel c) const; // throws IncompatibleError when absent

    // Span of one (segment, channel) row within samples.
    const float* row(std::size_t seg, std::size_t chan) const {
        return samples.data() + (seg * channels.size() + chan) * segment_length;
    }
    float* row(std::size_t seg, std::size_t chan) {
        return samples.data() + (seg * channels.size() + chan) * segment_length;
    }

    signal::SignalSegment segment(std::size_t seg, Channel c, double fs = 125.0) const;

    // Restrict to a subset of segment positions, preserving order.
    SegmentStore subset(const std::vector<std::size_t>& positions) const;
};

std::uint64_t store_payload_bytes(std::uint64_t n_segments, std::uint64_t n_channels,
                                  std::uint64_t segment_length);
std::uint64_t store_file_bytes(std::uint64_t n_segments, std::uint64_t n_channels,
                               std::uint64_t segment_length);

SegmentStore read_store(const std::string& path);
void write_store(const SegmentStore& store, const std::string& path);

struct LabeledRow {
    std::uint64_t id = 0;
    quality::SegmentLabel label;
};

// CSV with header `id,subject_id,sbp,dbp,map`.
std::vector<LabeledRow> read_labels(const std::string& path);
void write_labels(const std::vector<LabeledRow>& rows, const std::string& path);

struct SplitPlan {
    std::vector<std::uint64_t> train_ids, val_ids, test_ids;
    std::uint64_t seed = 0;
};

struct FoldPlan {
    std::vector<std::vector<std::uint64_t>> folds;
    std::uint64_t seed = 0;
};

// Deterministic shuffled split. val_frac is the share of the train+val
// portion carved out for validation (0 disables).
SplitPlan make_split(const std::vector<std::uint64_t>& ids, double train_frac, double val_frac,
                     std::uint64_t seed);
FoldPlan make_folds(const std::vector<std::uint64_t>& ids, int k, std::uint64_t seed);

// One windowed multi-channel stretch of a raw record: the core 1024 samples
// plus symmetric context margins for the derivative stages.
struct RawWindow {
    std::vector<double> ppg, ecg, abp; // equal lengths: core + 2 * margin
    std::size_t core_offset = 0;
    std::size_t core_length = 1024;
    bool edge_padded = false;
    std::uint64_t id = 0;
    std::string subject_id;
};

struct IngestOptions {
    std::map<Channel, std::string> column_of = {
        {Channel::PPG, "ppg"}, {Channel::ECG, "ecg"}, {Channel::ABP, "abp"}};
    double fs = 125.0;        // 1000 triggers decimation to 125 Hz
    bool abp_in_volts = false; // multiply ABP by 100 into mmHg
    std::size_t core_length = 1024;
    std::size_t margin = 66; // 2 * (1 + group_delay) for the default filter
};

// Reads one CSV file (or every *.csv in a directory) with one row per sample
// and named channel columns, then windows each record. Record identity (and
// subject id) is the file stem.
std::vector<RawWindow> ingest_csv(const std::string& path, const IngestOptions& opts);

struct SynthOptions {
    double sbp_lo = 90.0, sbp_hi = 180.0;
    double dbp_lo = 60.0, dbp_hi = 110.0;
    double fs = 125.0;
    std::size_t segment_length = 1024;
    int subjects_group = 4; // segments per synthetic subject
};

struct SynthResult {
    SegmentStore store; // channels PPG, VPG, APG, ECG, ABP
    std::vector<LabeledRow> labels;
};

// Deterministic synthetic instances whose ABP morphology is a function of
// the PPG pulse-shape parameters, so BP is learnable from the inputs. Every
// generated instance passes the default screening gates.
SynthResult synth_generate(std::size_t n, std::uint64_t seed, const SynthOptions& opts = {});

} // namespace bpae::dataset
