#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

// Shared test-side oracles, written independently of the library internals.
namespace testutil {

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Amplitude of the freq_hz component via quadrature projection.
inline double tone_amplitude(const std::vector<double>& x, double fs, double freq_hz) {
    const std::size_t n = x.size();
    double c = 0.0, s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double ph = 2.0 * M_PI * freq_hz * static_cast<double>(i) / fs;
        c += x[i] * std::cos(ph);
        s += x[i] * std::sin(ph);
    }
    return 2.0 * std::hypot(c, s) / static_cast<double>(n);
}

inline double rms(const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return std::sqrt(acc / static_cast<double>(x.size()));
}

// Frequency of the dominant DFT bin scanned over [0, f_max].
inline double peak_frequency(const std::vector<double>& x, double fs, double f_max) {
    const std::size_t n = x.size();
    const double df = fs / static_cast<double>(n);
    double best_f = 0.0, best_a = -1.0;
    for (double f = df; f <= f_max; f += df) {
        const double a = tone_amplitude(x, fs, f);
        if (a > best_a) {
            best_a = a;
            best_f = f;
        }
    }
    return best_f;
}

// Lag of the cross-correlation peak between a and b over [-max_lag, max_lag];
// positive means b is delayed relative to a.
inline long xcorr_peak_lag(const std::vector<double>& a, const std::vector<double>& b,
                           long max_lag) {
    const long n = static_cast<long>(a.size());
    double best = -1e300;
    long best_lag = 0;
    for (long lag = -max_lag; lag <= max_lag; ++lag) {
        double acc = 0.0;
        for (long i = 0; i < n; ++i) {
            const long j = i + lag;
            if (j < 0 || j >= n) continue;
            acc += a[i] * b[j];
        }
        if (acc > best) {
            best = acc;
            best_lag = lag;
        }
    }
    return best_lag;
}

} // namespace testutil
