#include "bpae/quality.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>

namespace bpae::quality {

namespace {

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

// std/mean of a positive-valued series; infinite when the mean is ~0.
double coeff_of_variation(const std::vector<double>& v) {
    const double mu = mean_of(v);
    if (std::abs(mu) < 1e-12) return std::numeric_limits<double>::infinity();
    return sample_std(v) / mu;
}

} // namespace

const char* reject_reason_name(RejectReason r) {
    switch (r) {
        case RejectReason::None: return "none";
        case RejectReason::SbpOutOfRange: return "sbp_out_of_range";
        case RejectReason::DbpOutOfRange: return "dbp_out_of_range";
        case RejectReason::PulsePressureOutOfRange: return "pulse_pressure_out_of_range";
        case RejectReason::Blank: return "blank";
        case RejectReason::DistortedIntervals: return "distorted_intervals";
        case RejectReason::DistortedProminences: return "distorted_prominences";
        case RejectReason::Unlabelable: return "unlabelable";
    }
    return "?";
}

PeakSet detect_peaks(const signal::SignalSegment& seg, int min_distance_samples,
                     double min_prominence) {
    const auto& x = seg.samples;
    const std::size_t n = x.size();
    if (n < 3) throw InvalidArgument("detect_peaks: segment shorter than 3 samples");
    if (min_distance_samples < 1) throw InvalidArgument("detect_peaks: min distance must be >= 1");

    const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
    const double range = *mx_it - *mn_it;
    const double prom_floor = min_prominence * range;

    // Candidate maxima: strictly above the left neighbor, not below the
    // right, so plateau/tie candidates resolve to the leftmost sample.
    std::vector<std::size_t> cand;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (x[i] > x[i - 1] && x[i] >= x[i + 1]) cand.push_back(i);
    }

    // Prominence: height above the higher of the two base minima, where each
    // base spans toward the nearest strictly higher sample (or the boundary).
    std::vector<double> prom(cand.size());
    for (std::size_t c = 0; c < cand.size(); ++c) {
        const std::size_t i = cand[c];
        double left_min = x[i];
        for (std::size_t j = i; ; --j) {
            if (x[j] > x[i]) break;
            left_min = std::min(left_min, x[j]);
            if (j == 0) break;
        }
        double right_min = x[i];
        for (std::size_t j = i; j < n; ++j) {
            if (x[j] > x[i]) break;
            right_min = std::min(right_min, x[j]);
        }
        prom[c] = x[i] - std::max(left_min, right_min);
    }

    // Keep peaks by descending height (leftmost first on equal height),
    // dropping any candidate within min_distance of an already kept peak.
    std::vector<std::size_t> order(cand.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (x[cand[a]] != x[cand[b]]) return x[cand[a]] > x[cand[b]];
        return cand[a] < cand[b];
    });

    std::vector<bool> kept(cand.size(), false);
    for (std::size_t oi : order) {
        if (prom[oi] < prom_floor || prom[oi] <= 0.0) continue;
        bool clash = false;
        for (std::size_t cj = 0; cj < cand.size(); ++cj) {
            if (!kept[cj]) continue;
            const long d = static_cast<long>(cand[oi]) - static_cast<long>(cand[cj]);
            if (std::labs(d) < min_distance_samples) {
                clash = true;
                break;
            }
        }
        if (!clash) kept[oi] = true;
    }

    PeakSet out;
    for (std::size_t c = 0; c < cand.size(); ++c) {
        if (!kept[c]) continue;
        out.indices.push_back(cand[c]);
        out.prominences.push_back(prom[c]);
    }
    for (std::size_t i = 1; i < out.indices.size(); ++i)
        out.intervals.push_back(static_cast<double>(out.indices[i] - out.indices[i - 1]));
    return out;
}

SegmentLabel extract_label(const signal::SignalSegment& abp, const ScreenConfig& cfg) {
    if (abp.units != signal::Units::MmHg)
        throw InvalidArgument("extract_label: ABP segment must be in mmHg");
    if (signal::nearly_flat(abp.samples)) throw UnlabelableSegment("extract_label: flat ABP segment");

    const PeakSet peaks = detect_peaks(abp, cfg.peak_min_distance, cfg.peak_min_prominence);

    signal::SignalSegment negated = abp;
    for (double& v : negated.samples) v = -v;
    const PeakSet troughs = detect_peaks(negated, cfg.peak_min_distance, cfg.peak_min_prominence);

    if (peaks.indices.size() < 2 || troughs.indices.size() < 2)
        throw UnlabelableSegment("extract_label: fewer than 2 systolic peaks or diastolic troughs");

    double sbp = 0.0;
    for (std::size_t i : peaks.indices) sbp += abp.samples[i];
    sbp /= static_cast<double>(peaks.indices.size());

    double dbp = 0.0;
    for (std::size_t i : troughs.indices) dbp += abp.samples[i];
    dbp /= static_cast<double>(troughs.indices.size());

    SegmentLabel label;
    label.sbp = sbp;
    label.dbp = dbp;
    label.map = (sbp + 2.0 * dbp) / 3.0;
    return label;
}

ScreenResult screen_segment(const std::vector<signal::SignalSegment>& channels,
                            const SegmentLabel& label, const ScreenConfig& cfg) {
    const auto reject = [](RejectReason r) { return ScreenResult{false, r}; };

    if (label.sbp < cfg.sbp_min || label.sbp > cfg.sbp_max)
        return reject(RejectReason::SbpOutOfRange);
    if (label.dbp < cfg.dbp_min || label.dbp > cfg.dbp_max)
        return reject(RejectReason::DbpOutOfRange);
    const double pp = label.sbp - label.dbp;
    if (pp < cfg.pp_min || pp > cfg.pp_max)
        return reject(RejectReason::PulsePressureOutOfRange);

    for (const auto& ch : channels) {
        if (signal::nearly_flat(ch.samples)) return reject(RejectReason::Blank);
    }

    // Distortion screening inspects ABP and PPG pulse regularity.
    std::vector<const signal::SignalSegment*> screened;
    for (const auto& ch : channels) {
        if (ch.channel == signal::Channel::ABP || ch.channel == signal::Channel::PPG)
            screened.push_back(&ch);
    }
    std::vector<PeakSet> peaksets;
    for (const auto* ch : screened) {
        PeakSet ps = detect_peaks(*ch, cfg.peak_min_distance, cfg.peak_min_prominence);
        // A channel without an established pulse train counts as distorted.
        if (ps.intervals.size() < 2) return reject(RejectReason::DistortedIntervals);
        peaksets.push_back(std::move(ps));
    }
    for (const auto& ps : peaksets) {
        if (coeff_of_variation(ps.intervals) > cfg.interval_cv_max)
            return reject(RejectReason::DistortedIntervals);
    }
    for (const auto& ps : peaksets) {
        if (coeff_of_variation(ps.prominences) > cfg.prominence_cv_max)
            return reject(RejectReason::DistortedProminences);
    }
    return ScreenResult{true, RejectReason::None};
}

DatasetStatistics dataset_statistics(const std::vector<SegmentLabel>& labels) {
    if (labels.empty()) throw InvalidArgument("dataset_statistics: empty label list");

    const auto stats_of = [&](auto getter) {
        std::vector<double> v(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) v[i] = getter(labels[i]);
        QuantityStats q;
        q.min = *std::min_element(v.begin(), v.end());
        q.max = *std::max_element(v.begin(), v.end());
        q.mean = mean_of(v);
        q.std = sample_std(v);
        return q;
    };

    DatasetStatistics out;
    out.sbp = stats_of([](const SegmentLabel& l) { return l.sbp; });
    out.dbp = stats_of([](const SegmentLabel& l) { return l.dbp; });
    out.map = stats_of([](const SegmentLabel& l) { return l.map; });
    return out;
}

} // namespace bpae::quality
