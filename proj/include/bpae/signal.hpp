#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bpae/error.hpp"

namespace bpae::signal {

enum class Channel : std::uint8_t { PPG = 0, VPG = 1, APG = 2, ECG = 3, ABP = 4 };
enum class Units : std::uint8_t { Normalized = 0, MmHg = 1, Volts = 2 };

const char* channel_name(Channel c);
Channel channel_from_name(const std::string& name);

// Fixed-length multichannel waveform window. Default segment length is 1024
// samples at 125 Hz.
struct SignalSegment {
    std::vector<double> samples;
    double fs = 125.0;
    Channel channel = Channel::PPG;
    Units units = Units::Normalized;
};

// Linear-phase FIR bandpass. Coefficients are symmetric, so the group delay
// is exactly (taps - 1) / 2 samples.
struct FilterSpec {
    std::vector<double> coeffs;
    double fs = 125.0;
    double low_cut_hz = 0.5;
    double high_cut_hz = 8.0;
    int taps = 65;
    int group_delay_samples = 32;
};

struct BaselineConfig {
    int window_samples = 188; // 1.5 s at 125 Hz, longer than one cardiac cycle
    int poly_order = 4;
};

// Shared-parameter min-max map for ABP amplitudes across a dataset.
struct GlobalNorm {
    double gmin = 0.0;
    double gmax = 1.0;

    double apply(double v) const { return (v - gmin) / (gmax - gmin); }
    double invert(double v) const { return v * (gmax - gmin) + gmin; }
    SignalSegment apply(const SignalSegment& seg) const;
    SignalSegment invert(const SignalSegment& seg) const;
};

struct DerivativePair {
    SignalSegment vpg;
    SignalSegment apg;
    bool edge_padded = false; // margins were synthesized by reflection
};

// Flat within numerical noise: range no larger than 1e-9 of the value scale.
bool nearly_flat(const std::vector<double>& samples);

// Centered moving minimum; windows truncate at the boundaries. For even
// windows the extra element extends forward.
std::vector<double> moving_min(const std::vector<double>& x, int window);

// Least-squares polynomial fit, coefficients in ascending order (c0 + c1*x + ...).
// Internally fits on a rescaled abscissa for conditioning.
std::vector<double> polyfit(const std::vector<double>& xs, const std::vector<double>& ys, int order);
std::vector<double> polyval(const std::vector<double>& coeffs, const std::vector<double>& xs);
std::vector<double> polyfit_eval(const std::vector<double>& xs, const std::vector<double>& ys,
                                 int order, const std::vector<double>& eval_x);

// Subtracts the moving-minimum/polynomial baseline estimate. When
// preserve_level is set, only the time-varying part of the baseline is
// removed (the baseline mean stays), which keeps absolute pressure levels on
// ABP intact while still flattening drift.
SignalSegment correct_baseline(const SignalSegment& seg, const BaselineConfig& cfg,
                               bool preserve_level = false);

// Affine map of the segment onto [0, 1]. Flat input raises DegenerateSignal.
SignalSegment range_normalize(const SignalSegment& seg);

GlobalNorm global_minmax(const std::vector<SignalSegment>& abp_segments);

// Windowed-sinc (Hamming) linear-phase FIR with exact nulls at DC and fs/2.
// low/high are treated as passband edges; the ideal cutoffs are widened by
// half the window transition width so the edges keep near-unity gain.
FilterSpec design_bandpass(double fs, double low_cut_hz, double high_cut_hz, int taps);

double filter_response_at(const FilterSpec& filt, double freq_hz);

// Group-delay-compensated FIR application, same length as input. Edges use
// reflection padding.
std::vector<double> apply_compensated(const std::vector<double>& x, const FilterSpec& filt);

// First and second PPG derivatives (VPG, APG): forward difference, bandpass,
// left-shift by the filter group delay, then range normalization. The input
// should carry a context margin of 2*(1+group_delay) samples per side around
// the central 1024-sample window; missing margin is reflected and flagged.
DerivativePair derivative_chain(const SignalSegment& ppg, const FilterSpec& filt,
                                std::size_t out_len = 1024);

// Anti-alias lowpass then decimate by 8 (1000 Hz -> 125 Hz). Trailing samples
// beyond a multiple of 8 are truncated.
std::vector<double> resample_to_125(const std::vector<double>& x);

// BCG-style ABP stored in volts at 100 mmHg/volt.
SignalSegment denormalize_abp_volts(const SignalSegment& seg);

} // namespace bpae::signal
