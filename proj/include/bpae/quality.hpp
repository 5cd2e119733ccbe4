#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bpae/signal.hpp"

namespace bpae::quality {

struct PeakSet {
    std::vector<std::size_t> indices;    // strictly increasing
    std::vector<double> prominences;     // relative heights, > 0
    std::vector<double> intervals;       // successive index differences
};

struct SegmentLabel {
    double sbp = 0.0;
    double dbp = 0.0;
    double map = 0.0;
    std::string subject_id;
};

struct ScreenConfig {
    double sbp_min = 80.0, sbp_max = 190.0;
    double dbp_min = 50.0, dbp_max = 120.0;
    double pp_min = 20.0, pp_max = 120.0;
    double interval_cv_max = 0.25;
    double prominence_cv_max = 0.50;
    int peak_min_distance = 40;       // max ~187 bpm at 125 Hz
    double peak_min_prominence = 0.3; // fraction of signal range
};

enum class RejectReason : std::uint8_t {
    None = 0,
    SbpOutOfRange,
    DbpOutOfRange,
    PulsePressureOutOfRange,
    Blank,
    DistortedIntervals,
    DistortedProminences,
    Unlabelable, // pipeline-level: label extraction failed upstream
};

const char* reject_reason_name(RejectReason r);

struct ScreenResult {
    bool accepted = false;
    RejectReason reason = RejectReason::None;
};

// Local maxima with a minimum spacing and a prominence floor given as a
// fraction of the segment range. Ties inside the spacing keep the leftmost.
PeakSet detect_peaks(const signal::SignalSegment& seg, int min_distance_samples,
                     double min_prominence);

// SBP = mean systolic peak amplitude, DBP = mean diastolic trough amplitude,
// MAP = (SBP + 2 DBP) / 3. Needs >= 2 peaks and >= 2 troughs.
SegmentLabel extract_label(const signal::SignalSegment& abp, const ScreenConfig& cfg = {});

// Gate order: SBP range, DBP range, pulse pressure, blank, interval CV,
// prominence CV; the first failing gate is reported.
ScreenResult screen_segment(const std::vector<signal::SignalSegment>& channels,
                            const SegmentLabel& label, const ScreenConfig& cfg = {});

struct QuantityStats {
    double min = 0.0, max = 0.0, mean = 0.0, std = 0.0;
};

struct DatasetStatistics {
    QuantityStats sbp, dbp, map;
};

// Sample statistics, n-1 denominator; singleton std is 0 by convention.
DatasetStatistics dataset_statistics(const std::vector<SegmentLabel>& labels);

} // namespace bpae::quality
