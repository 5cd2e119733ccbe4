#include "bpae/signal.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace bpae::signal {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

void require(bool cond, const char* msg) {
    if (!cond) throw InvalidArgument(msg);
}

} // namespace

const char* channel_name(Channel c) {
    switch (c) {
        case Channel::PPG: return "ppg";
        case Channel::VPG: return "vpg";
        case Channel::APG: return "apg";
        case Channel::ECG: return "ecg";
        case Channel::ABP: return "abp";
    }
    return "?";
}

Channel channel_from_name(const std::string& name) {
    std::string s;
    for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (s == "ppg") return Channel::PPG;
    if (s == "vpg") return Channel::VPG;
    if (s == "apg") return Channel::APG;
    if (s == "ecg") return Channel::ECG;
    if (s == "abp") return Channel::ABP;
    throw InvalidArgument("unknown channel name: " + name);
}

std::vector<double> moving_min(const std::vector<double>& x, int window) {
    const std::size_t n = x.size();
    require(n > 0, "moving_min: empty input");
    require(window >= 1, "moving_min: window must be >= 1");
    require(static_cast<std::size_t>(window) <= n, "moving_min: window exceeds input length");

    // Window at i covers [i - (w-1)/2, i + w/2], truncated at the boundaries.
    const int back = (window - 1) / 2;
    const int fwd = window / 2;

    std::vector<double> out(n);
    // Monotone deque of candidate minima indices.
    std::deque<std::size_t> q;
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t hi = std::min(n - 1, i + static_cast<std::size_t>(fwd));
        while (next <= hi) {
            while (!q.empty() && x[q.back()] >= x[next]) q.pop_back();
            q.push_back(next++);
        }
        const std::size_t lo = i >= static_cast<std::size_t>(back) ? i - back : 0;
        while (q.front() < lo) q.pop_front();
        out[i] = x[q.front()];
    }
    return out;
}

namespace {

// Householder QR least squares on the Vandermonde matrix in a rescaled
// domain t in [-1, 1]. Returns coefficients in t, plus the affine map.
struct ScaledFit {
    std::vector<double> coeffs_t; // ascending in t
    double a = 1.0;               // t = a*x + b
    double b = 0.0;
};

ScaledFit polyfit_scaled(const std::vector<double>& xs, const std::vector<double>& ys, int order) {
    const std::size_t n = xs.size();
    require(order >= 0, "polyfit: negative order");
    require(n == ys.size(), "polyfit: x/y size mismatch");
    require(n >= static_cast<std::size_t>(order) + 1, "polyfit: need at least order+1 points");

    const auto [mn_it, mx_it] = std::minmax_element(xs.begin(), xs.end());
    const double mn = *mn_it, mx = *mx_it;
    ScaledFit fit;
    if (mx > mn) {
        fit.a = 2.0 / (mx - mn);
        fit.b = -(mx + mn) / (mx - mn);
    }

    const std::size_t m = static_cast<std::size_t>(order) + 1;
    // Column-major Vandermonde in t.
    std::vector<double> A(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = fit.a * xs[i] + fit.b;
        double p = 1.0;
        for (std::size_t j = 0; j < m; ++j) {
            A[j * n + i] = p;
            p *= t;
        }
    }
    std::vector<double> rhs = ys;

    // Householder QR, applying reflections to rhs as we go.
    std::vector<double> rdiag(m);
    for (std::size_t k = 0; k < m; ++k) {
        double nrm = 0.0;
        for (std::size_t i = k; i < n; ++i) nrm = std::hypot(nrm, A[k * n + i]);
        if (nrm == 0.0) throw SingularFit("polyfit: rank-deficient system");
        if (A[k * n + k] < 0.0) nrm = -nrm;
        for (std::size_t i = k; i < n; ++i) A[k * n + i] /= nrm;
        A[k * n + k] += 1.0;
        for (std::size_t j = k + 1; j < m; ++j) {
            double s = 0.0;
            for (std::size_t i = k; i < n; ++i) s += A[k * n + i] * A[j * n + i];
            s = -s / A[k * n + k];
            for (std::size_t i = k; i < n; ++i) A[j * n + i] += s * A[k * n + i];
        }
        double s = 0.0;
        for (std::size_t i = k; i < n; ++i) s += A[k * n + i] * rhs[i];
        s = -s / A[k * n + k];
        for (std::size_t i = k; i < n; ++i) rhs[i] += s * A[k * n + i];
        rdiag[k] = -nrm;
    }

    // Back substitution: R c = rhs[0..m). R's strict upper triangle sits in
    // the transformed Vandermonde rows above each pivot.
    double rmax = 0.0;
    for (double d : rdiag) rmax = std::max(rmax, std::abs(d));
    fit.coeffs_t.assign(m, 0.0);
    for (std::size_t k = m; k-- > 0;) {
        if (std::abs(rdiag[k]) < 1e-13 * rmax)
            throw SingularFit("polyfit: rank-deficient system");
        double s = rhs[k];
        for (std::size_t j = k + 1; j < m; ++j) s -= A[j * n + k] * fit.coeffs_t[j];
        fit.coeffs_t[k] = s / rdiag[k];
    }
    return fit;
}

double eval_ascending(const std::vector<double>& c, double x) {
    double acc = 0.0;
    for (std::size_t j = c.size(); j-- > 0;) acc = acc * x + c[j];
    return acc;
}

} // namespace

std::vector<double> polyfit(const std::vector<double>& xs, const std::vector<double>& ys, int order) {
    const ScaledFit fit = polyfit_scaled(xs, ys, order);
    // Expand p(a*x + b) into ascending powers of x.
    std::vector<double> out(1, 0.0);
    for (std::size_t j = fit.coeffs_t.size(); j-- > 0;) {
        // out = out * (a*x + b) + c_j
        std::vector<double> nxt(out.size() + 1, 0.0);
        for (std::size_t i = 0; i < out.size(); ++i) {
            nxt[i] += out[i] * fit.b;
            nxt[i + 1] += out[i] * fit.a;
        }
        nxt[0] += fit.coeffs_t[j];
        while (nxt.size() > 1 && nxt.back() == 0.0) nxt.pop_back();
        out = std::move(nxt);
    }
    out.resize(static_cast<std::size_t>(order) + 1, 0.0);
    return out;
}

std::vector<double> polyval(const std::vector<double>& coeffs, const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = eval_ascending(coeffs, xs[i]);
    return out;
}

std::vector<double> polyfit_eval(const std::vector<double>& xs, const std::vector<double>& ys,
                                 int order, const std::vector<double>& eval_x) {
    const ScaledFit fit = polyfit_scaled(xs, ys, order);
    std::vector<double> out(eval_x.size());
    for (std::size_t i = 0; i < eval_x.size(); ++i)
        out[i] = eval_ascending(fit.coeffs_t, fit.a * eval_x[i] + fit.b);
    return out;
}

SignalSegment correct_baseline(const SignalSegment& seg, const BaselineConfig& cfg,
                               bool preserve_level) {
    require(cfg.window_samples >= 2, "correct_baseline: window must be >= 2");
    require(cfg.poly_order >= 1 && cfg.poly_order <= 10, "correct_baseline: order must be in [1,10]");
    require(seg.samples.size() >= static_cast<std::size_t>(cfg.window_samples),
            "correct_baseline: segment shorter than baseline window");

    const std::size_t n = seg.samples.size();
    const std::vector<double> mins = moving_min(seg.samples, cfg.window_samples);
    std::vector<double> idx(n);
    std::iota(idx.begin(), idx.end(), 0.0);
    std::vector<double> baseline = polyfit_eval(idx, mins, cfg.poly_order, idx);

    double level = 0.0;
    if (preserve_level) {
        level = std::accumulate(baseline.begin(), baseline.end(), 0.0) / static_cast<double>(n);
    }
    SignalSegment out = seg;
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = seg.samples[i] - baseline[i] + level;
    return out;
}

bool nearly_flat(const std::vector<double>& samples) {
    if (samples.empty()) return true;
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    const double scale = std::max({1.0, std::abs(*mn), std::abs(*mx)});
    return *mx - *mn <= 1e-9 * scale;
}

SignalSegment range_normalize(const SignalSegment& seg) {
    require(!seg.samples.empty(), "range_normalize: empty segment");
    if (nearly_flat(seg.samples)) throw DegenerateSignal("range_normalize: flat signal");
    const auto [mn_it, mx_it] = std::minmax_element(seg.samples.begin(), seg.samples.end());
    const double mn = *mn_it, mx = *mx_it;
    SignalSegment out = seg;
    const double inv = 1.0 / (mx - mn);
    for (double& v : out.samples) v = (v - mn) * inv;
    out.units = Units::Normalized;
    return out;
}

GlobalNorm global_minmax(const std::vector<SignalSegment>& abp_segments) {
    require(!abp_segments.empty(), "global_minmax: empty segment list");
    GlobalNorm g{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& seg : abp_segments) {
        for (double v : seg.samples) {
            g.gmin = std::min(g.gmin, v);
            g.gmax = std::max(g.gmax, v);
        }
    }
    require(g.gmax > g.gmin, "global_minmax: degenerate dataset range");
    return g;
}

SignalSegment GlobalNorm::apply(const SignalSegment& seg) const {
    SignalSegment out = seg;
    for (double& v : out.samples) v = apply(v);
    out.units = Units::Normalized;
    return out;
}

SignalSegment GlobalNorm::invert(const SignalSegment& seg) const {
    SignalSegment out = seg;
    for (double& v : out.samples) v = invert(v);
    out.units = Units::MmHg;
    return out;
}

namespace {

// Symmetric windowed-sinc taps for an ideal response that is the difference
// of two lowpass prototypes at f1 < f2 (f1 == 0 degenerates to a lowpass).
std::vector<double> windowed_sinc(double fs, double f1, double f2, int taps) {
    const int mid = (taps - 1) / 2;
    const double w1 = 2.0 * kPi * f1 / fs;
    const double w2 = 2.0 * kPi * f2 / fs;
    std::vector<double> h(taps);
    for (int n = 0; n < taps; ++n) {
        const int m = n - mid;
        double ideal;
        if (m == 0) {
            ideal = (w2 - w1) / kPi;
        } else {
            ideal = (std::sin(w2 * m) - std::sin(w1 * m)) / (kPi * m);
        }
        const double window = 0.54 - 0.46 * std::cos(2.0 * kPi * n / (taps - 1));
        h[n] = ideal * window;
    }
    return h;
}

} // namespace

FilterSpec design_bandpass(double fs, double low_cut_hz, double high_cut_hz, int taps) {
    require(fs > 0, "design_bandpass: fs must be positive");
    require(taps >= 5 && taps % 2 == 1, "design_bandpass: taps must be odd and >= 5");
    require(low_cut_hz > 0 && low_cut_hz < high_cut_hz && high_cut_hz < fs / 2,
            "design_bandpass: need 0 < low < high < fs/2");

    // Treat low/high as passband edges: widen the ideal cutoffs by half the
    // Hamming transition width so the stated edges stay near unity gain.
    const double half_transition = 1.65 * fs / taps;
    const double f1 = std::max(0.0, low_cut_hz - half_transition);
    const double f2 = std::min(fs / 2, high_cut_hz + half_transition);
    std::vector<double> h = windowed_sinc(fs, f1, f2, taps);

    // Impose exact zeros at DC and Nyquist. Both corrections are constants
    // modulated by (-1)^n, so tap symmetry (linear phase) is preserved.
    double h0 = 0.0, hpi = 0.0;
    for (int n = 0; n < taps; ++n) {
        h0 += h[n];
        hpi += (n % 2 == 0) ? h[n] : -h[n];
    }
    const double denom = static_cast<double>(taps) * taps - 1.0;
    const double a = (taps * h0 - hpi) / denom;
    const double b = (taps * hpi - h0) / denom;
    for (int n = 0; n < taps; ++n) h[n] -= a + ((n % 2 == 0) ? b : -b);

    FilterSpec spec;
    spec.coeffs = std::move(h);
    spec.fs = fs;
    spec.low_cut_hz = low_cut_hz;
    spec.high_cut_hz = high_cut_hz;
    spec.taps = taps;
    spec.group_delay_samples = (taps - 1) / 2;
    return spec;
}

double filter_response_at(const FilterSpec& filt, double freq_hz) {
    // Magnitude of the DTFT at freq_hz.
    const double w = 2.0 * kPi * freq_hz / filt.fs;
    double re = 0.0, im = 0.0;
    for (int n = 0; n < filt.taps; ++n) {
        re += filt.coeffs[n] * std::cos(w * n);
        im -= filt.coeffs[n] * std::sin(w * n);
    }
    return std::hypot(re, im);
}

namespace {

// Odd (point-symmetric) extension: continuous value and first derivative at
// the boundary, so filtered edges stay clean.
double reflect_at(const std::vector<double>& x, long i) {
    const long n = static_cast<long>(x.size());
    if (i >= 0 && i < n) return x[static_cast<std::size_t>(i)];
    if (n == 1) return x[0];
    if (i < 0) return 2.0 * x[0] - reflect_at(x, -i);
    return 2.0 * x[static_cast<std::size_t>(n - 1)] - reflect_at(x, 2 * (n - 1) - i);
}

} // namespace

std::vector<double> apply_compensated(const std::vector<double>& x, const FilterSpec& filt) {
    require(x.size() >= 2, "apply_compensated: need at least 2 samples");
    const int gd = filt.group_delay_samples;
    const long n = static_cast<long>(x.size());
    std::vector<double> out(x.size());
    for (long i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < filt.taps; ++k) acc += filt.coeffs[k] * reflect_at(x, i + gd - k);
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

DerivativePair derivative_chain(const SignalSegment& ppg, const FilterSpec& filt,
                                std::size_t out_len) {
    const int gd = filt.group_delay_samples;
    require(out_len > 0, "derivative_chain: zero output length");
    if (ppg.samples.size() < out_len)
        throw LengthError("derivative_chain: input shorter than output window");

    // The APG stage reaches 2*gd samples left and 2*gd + 2 right of the core
    // window; reflect-pad whatever margin the caller did not supply.
    const long need_left = 2L * gd;
    const long need_right = 2L * gd + 2;
    const long have = static_cast<long>(ppg.samples.size()) - static_cast<long>(out_len);
    const long margin_left = have / 2;
    const long margin_right = have - margin_left;

    bool padded = false;
    std::vector<double> x;
    long off = margin_left; // index of the core window start within x
    if (margin_left >= need_left && margin_right >= need_right) {
        x = ppg.samples;
    } else {
        padded = true;
        const long pad_l = std::max(0L, need_left - margin_left);
        const long pad_r = std::max(0L, need_right - margin_right);
        x.reserve(ppg.samples.size() + static_cast<std::size_t>(pad_l + pad_r));
        for (long i = -pad_l; i < static_cast<long>(ppg.samples.size()) + pad_r; ++i)
            x.push_back(reflect_at(ppg.samples, i));
        off = margin_left + pad_l;
    }

    const auto diff = [](const std::vector<double>& v) {
        std::vector<double> d(v.size() - 1);
        for (std::size_t i = 0; i + 1 < v.size(); ++i) d[i] = v[i + 1] - v[i];
        return d;
    };
    // Delay-compensated convolution, valid-region only (callers guarantee bounds).
    const auto filt_shift = [&](const std::vector<double>& v, long lo, long hi) {
        std::vector<double> y(static_cast<std::size_t>(hi - lo));
        for (long i = lo; i < hi; ++i) {
            double acc = 0.0;
            for (int k = 0; k < filt.taps; ++k) acc += filt.coeffs[k] * v[static_cast<std::size_t>(i + gd - k)];
            y[static_cast<std::size_t>(i - lo)] = acc;
        }
        return y;
    };

    const std::vector<double> d1 = diff(x);
    // VPG over an extended window so the APG stage has context.
    const long v_lo = off - gd;
    const long v_hi = off + static_cast<long>(out_len) + gd + 1;
    const std::vector<double> v_ext = filt_shift(d1, v_lo, v_hi);

    const std::vector<double> d2 = diff(v_ext);
    // APG at core positions; v_ext index j corresponds to absolute v_lo + j.
    std::vector<double> apg_core(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        const long abs_i = off + static_cast<long>(i);
        double acc = 0.0;
        for (int k = 0; k < filt.taps; ++k) {
            const long j = abs_i + gd - k - v_lo;
            acc += filt.coeffs[k] * d2[static_cast<std::size_t>(j)];
        }
        apg_core[i] = acc;
    }

    std::vector<double> vpg_core(out_len);
    for (std::size_t i = 0; i < out_len; ++i)
        vpg_core[i] = v_ext[static_cast<std::size_t>(off + static_cast<long>(i) - v_lo)];

    SignalSegment vpg;
    vpg.samples = std::move(vpg_core);
    vpg.fs = ppg.fs;
    vpg.channel = Channel::VPG;
    SignalSegment apg;
    apg.samples = std::move(apg_core);
    apg.fs = ppg.fs;
    apg.channel = Channel::APG;

    DerivativePair out;
    out.vpg = range_normalize(vpg);
    out.apg = range_normalize(apg);
    out.edge_padded = padded;
    return out;
}

std::vector<double> resample_to_125(const std::vector<double>& x) {
    require(!x.empty(), "resample_to_125: empty input");
    const std::size_t n8 = x.size() - x.size() % 8;
    require(n8 >= 8, "resample_to_125: fewer than 8 samples");
    std::vector<double> head(x.begin(), x.begin() + static_cast<long>(n8));

    // Anti-alias lowpass at 1000 Hz: Hamming windowed sinc, cutoff 55 Hz,
    // unity DC gain, ~-53 dB past 70 Hz.
    static const std::vector<double> kTaps = [] {
        std::vector<double> h = windowed_sinc(1000.0, 0.0, 55.0, 129);
        double sum = 0.0;
        for (double v : h) sum += v;
        for (double& v : h) v /= sum;
        return h;
    }();
    FilterSpec lp;
    lp.coeffs = kTaps;
    lp.fs = 1000.0;
    lp.taps = 129;
    lp.group_delay_samples = 64;

    const std::vector<double> y = apply_compensated(head, lp);
    std::vector<double> out(n8 / 8);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = y[8 * j];
    return out;
}

SignalSegment denormalize_abp_volts(const SignalSegment& seg) {
    if (seg.units != Units::Volts)
        throw InvalidArgument("denormalize_abp_volts: segment units must be volts");
    SignalSegment out = seg;
    for (double& v : out.samples) v *= 100.0;
    out.units = Units::MmHg;
    return out;
}

} // namespace bpae::signal
