#include "bpae/unet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>

#include "bpae/binio.hpp"
#include "bpae/rng.hpp"
#include "bpae/threading.hpp"

namespace bpae::unet {

void UNetConfig::validate() const {
    if (depth < 1 || depth > 4) throw InvalidArgument("unet: depth must be in [1,4]");
    if (width < 1) throw InvalidArgument("unet: width must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("unet: kernel must be odd and >= 1");
    if (n_features < 1) throw InvalidArgument("unet: n_features must be >= 1");
    if (segment_length == 0 || segment_length % (1u << depth) != 0)
        throw InvalidArgument("unet: segment length must be a positive multiple of 2^depth");
    if (in_channels.empty() || in_channels.size() > 4)
        throw InvalidArgument("unet: 1..4 input channels required");
    for (std::size_t i = 0; i < in_channels.size(); ++i)
        for (std::size_t j = i + 1; j < in_channels.size(); ++j)
            if (in_channels[i] == in_channels[j])
                throw InvalidArgument("unet: duplicate input channel");
    if (target != Channel::ABP && target != Channel::PPG)
        throw InvalidArgument("unet: target must be ABP or PPG");
}

std::size_t UNetConfig::flat_size() const {
    return (static_cast<std::size_t>(segment_length) >> depth) *
           (static_cast<std::size_t>(width) << (depth - 1));
}

namespace {

std::uint64_t conv_params_of(std::size_t in, std::size_t out, std::size_t k) {
    return static_cast<std::uint64_t>(k) * in * out + out;
}

} // namespace

ParamCounts param_count(const UNetConfig& cfg) {
    cfg.validate();
    const std::size_t k = static_cast<std::size_t>(cfg.kernel);
    const std::size_t C = cfg.in_channels.size();
    const std::size_t W = static_cast<std::size_t>(cfg.width);
    const std::size_t d = static_cast<std::size_t>(cfg.depth);

    ParamCounts pc;
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t wj = W << j;
        const std::size_t in0 = (j == 0) ? C : (W << (j - 1));
        pc.conv_params += conv_params_of(in0, wj, k); // enc conv1
        pc.conv_params += conv_params_of(wj, wj, k);  // enc conv2
    }
    const std::size_t wd = W << (d - 1);
    pc.conv_params += conv_params_of(wd, 2 * wd, k);     // bottleneck conv1
    pc.conv_params += conv_params_of(2 * wd, 2 * wd, k); // bottleneck conv2
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t wj = W << j;
        pc.conv_params += conv_params_of(2 * wj, wj, 2); // transposed conv, kernel 2
        pc.conv_params += conv_params_of(2 * wj, wj, k); // dec conv1
        pc.conv_params += conv_params_of(wj, wj, k);     // dec conv2
    }
    pc.conv_params += conv_params_of(W, 1, 1); // output conv

    const std::uint64_t flat = cfg.flat_size();
    const std::uint64_t F = cfg.n_features;
    pc.compress_dense_weights = flat * F;
    pc.dense_params = (flat * F + F) + (F * flat + flat);
    pc.total = pc.conv_params + pc.dense_params;
    return pc;
}

namespace {

Conv1D make_conv(std::size_t in, std::size_t out, std::size_t k) {
    Conv1D c;
    c.in_ch = in;
    c.out_ch = out;
    c.k = k;
    c.w.assign(k * in * out, 0.0);
    c.b.assign(out, 0.0);
    c.gw.assign(c.w.size(), 0.0);
    c.gb.assign(c.b.size(), 0.0);
    return c;
}

TConv1D make_tconv(std::size_t in, std::size_t out) {
    TConv1D c;
    c.in_ch = in;
    c.out_ch = out;
    c.w.assign(2 * in * out, 0.0);
    c.b.assign(out, 0.0);
    c.gw.assign(c.w.size(), 0.0);
    c.gb.assign(c.b.size(), 0.0);
    return c;
}

Dense make_dense(std::size_t in, std::size_t out) {
    Dense d;
    d.in = in;
    d.out = out;
    d.w.assign(in * out, 0.0);
    d.b.assign(out, 0.0);
    d.gw.assign(d.w.size(), 0.0);
    d.gb.assign(d.b.size(), 0.0);
    return d;
}

UNetModel make_model(const UNetConfig& cfg) {
    cfg.validate();
    const std::size_t k = static_cast<std::size_t>(cfg.kernel);
    const std::size_t C = cfg.in_channels.size();
    const std::size_t W = static_cast<std::size_t>(cfg.width);
    const std::size_t d = static_cast<std::size_t>(cfg.depth);

    UNetModel m;
    m.cfg = cfg;
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t wj = W << j;
        const std::size_t in0 = (j == 0) ? C : (W << (j - 1));
        m.enc.push_back(make_conv(in0, wj, k));
        m.enc.push_back(make_conv(wj, wj, k));
    }
    const std::size_t wd = W << (d - 1);
    m.bott1 = make_conv(wd, 2 * wd, k);
    m.bott2 = make_conv(2 * wd, 2 * wd, k);
    m.compress = make_dense(cfg.flat_size(), cfg.n_features);
    m.expand = make_dense(cfg.n_features, cfg.flat_size());
    for (std::size_t s = 0; s < d; ++s) {
        const std::size_t j = d - 1 - s; // level, deepest first
        const std::size_t wj = W << j;
        m.ups.push_back(make_tconv(2 * wj, wj));
        m.dec.push_back(make_conv(2 * wj, wj, k));
        m.dec.push_back(make_conv(wj, wj, k));
    }
    m.out_conv = make_conv(W, 1, 1);
    return m;
}

void he_fill(Rng& rng, std::vector<double>& w, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : w) v = rng.uniform(-bound, bound);
}

} // namespace

std::vector<ParamView> param_views(UNetModel& m) {
    std::vector<ParamView> views;
    const auto add_conv = [&](const std::string& name, Conv1D& c) {
        views.push_back({name + ".w", {c.out_ch, c.in_ch, c.k}, &c.w, &c.gw});
        views.push_back({name + ".b", {c.out_ch}, &c.b, &c.gb});
    };
    const auto add_tconv = [&](const std::string& name, TConv1D& c) {
        views.push_back({name + ".w", {c.in_ch, c.out_ch, 2}, &c.w, &c.gw});
        views.push_back({name + ".b", {c.out_ch}, &c.b, &c.gb});
    };
    const auto add_dense = [&](const std::string& name, Dense& dn) {
        views.push_back({name + ".w", {dn.out, dn.in}, &dn.w, &dn.gw});
        views.push_back({name + ".b", {dn.out}, &dn.b, &dn.gb});
    };

    const std::size_t d = static_cast<std::size_t>(m.cfg.depth);
    for (std::size_t j = 0; j < d; ++j) {
        add_conv("enc" + std::to_string(j) + ".c1", m.enc[2 * j]);
        add_conv("enc" + std::to_string(j) + ".c2", m.enc[2 * j + 1]);
    }
    add_conv("bott.c1", m.bott1);
    add_conv("bott.c2", m.bott2);
    add_dense("compress", m.compress);
    add_dense("expand", m.expand);
    for (std::size_t s = 0; s < d; ++s) {
        const std::string lvl = std::to_string(d - 1 - s);
        add_tconv("up" + lvl, m.ups[s]);
        add_conv("dec" + lvl + ".c1", m.dec[2 * s]);
        add_conv("dec" + lvl + ".c2", m.dec[2 * s + 1]);
    }
    add_conv("out", m.out_conv);
    return views;
}

UNetModel init_model(const UNetConfig& cfg, std::uint64_t seed) {
    UNetModel m = make_model(cfg);
    Rng rng(seed);
    const std::size_t d = static_cast<std::size_t>(cfg.depth);
    for (std::size_t j = 0; j < d; ++j) {
        he_fill(rng, m.enc[2 * j].w, m.enc[2 * j].in_ch * m.enc[2 * j].k);
        he_fill(rng, m.enc[2 * j + 1].w, m.enc[2 * j + 1].in_ch * m.enc[2 * j + 1].k);
    }
    he_fill(rng, m.bott1.w, m.bott1.in_ch * m.bott1.k);
    he_fill(rng, m.bott2.w, m.bott2.in_ch * m.bott2.k);
    he_fill(rng, m.compress.w, m.compress.in);
    he_fill(rng, m.expand.w, m.expand.in);
    for (std::size_t s = 0; s < d; ++s) {
        // The upsampling convolutions feed the skip concatenation with no
        // activation of their own and start at zero: the bottleneck branch is
        // silent at initialization, so early training cannot profit from
        // killing its ReLU units to mute an untrained branch, and the branch
        // grows in as it becomes useful.
        he_fill(rng, m.dec[2 * s].w, m.dec[2 * s].in_ch * m.dec[2 * s].k);
        he_fill(rng, m.dec[2 * s + 1].w, m.dec[2 * s + 1].in_ch * m.dec[2 * s + 1].k);
    }
    he_fill(rng, m.out_conv.w, m.out_conv.in_ch * m.out_conv.k);
    return m;
}

namespace {

// ---- layer kernels -------------------------------------------------------
// Every output element is written by exactly one worker and every reduction
// runs in a fixed order, so results are independent of the thread count.

void conv_forward(const Conv1D& c, const double* x, double* y, std::size_t B, std::size_t L,
                  int threads) {
    const long pad = static_cast<long>(c.k - 1) / 2;
    parallel_for(B * c.out_ch, threads, [&](std::size_t bc) {
        const std::size_t b = bc / c.out_ch;
        const std::size_t co = bc % c.out_ch;
        const double* xb = x + b * c.in_ch * L;
        double* yb = y + bc * L;
        const double bias = c.b[co];
        for (std::size_t i = 0; i < L; ++i) yb[i] = bias;
        for (std::size_t ci = 0; ci < c.in_ch; ++ci) {
            const double* xc = xb + ci * L;
            const double* wr = c.w.data() + (co * c.in_ch + ci) * c.k;
            for (std::size_t t = 0; t < c.k; ++t) {
                const double wv = wr[t];
                const long sh = static_cast<long>(t) - pad;
                const std::size_t lo = sh < 0 ? static_cast<std::size_t>(-sh) : 0;
                const std::size_t hi = sh > 0 ? L - static_cast<std::size_t>(sh) : L;
                for (std::size_t i = lo; i < hi; ++i)
                    yb[i] += wv * xc[static_cast<long>(i) + sh];
            }
        }
    });
}

// dx may be null for the input layer.
void conv_backward(Conv1D& c, const double* x, const double* dy, double* dx, std::size_t B,
                   std::size_t L, int threads) {
    const long pad = static_cast<long>(c.k - 1) / 2;
    parallel_for(c.out_ch, threads, [&](std::size_t co) {
        double* gwr = c.gw.data() + co * c.in_ch * c.k;
        double gb = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double* dyb = dy + (b * c.out_ch + co) * L;
            for (std::size_t i = 0; i < L; ++i) gb += dyb[i];
            for (std::size_t ci = 0; ci < c.in_ch; ++ci) {
                const double* xc = x + (b * c.in_ch + ci) * L;
                for (std::size_t t = 0; t < c.k; ++t) {
                    const long sh = static_cast<long>(t) - pad;
                    const std::size_t lo = sh < 0 ? static_cast<std::size_t>(-sh) : 0;
                    const std::size_t hi = sh > 0 ? L - static_cast<std::size_t>(sh) : L;
                    double acc = 0.0;
                    for (std::size_t i = lo; i < hi; ++i)
                        acc += dyb[i] * xc[static_cast<long>(i) + sh];
                    gwr[ci * c.k + t] += acc;
                }
            }
        }
        c.gb[co] += gb;
    });
    if (!dx) return;
    parallel_for(B * c.in_ch, threads, [&](std::size_t bc) {
        const std::size_t b = bc / c.in_ch;
        const std::size_t ci = bc % c.in_ch;
        double* dxc = dx + bc * L;
        for (std::size_t i = 0; i < L; ++i) dxc[i] = 0.0;
        for (std::size_t co = 0; co < c.out_ch; ++co) {
            const double* dyb = dy + (b * c.out_ch + co) * L;
            const double* wr = c.w.data() + (co * c.in_ch + ci) * c.k;
            for (std::size_t t = 0; t < c.k; ++t) {
                const double wv = wr[t];
                const long sh = static_cast<long>(t) - pad;
                // y[i] consumed x[i+sh] => dx[j] += w * dy[j-sh]
                const std::size_t lo = sh > 0 ? static_cast<std::size_t>(sh) : 0;
                const std::size_t hi = sh < 0 ? L - static_cast<std::size_t>(-sh) : L;
                for (std::size_t j = lo; j < hi; ++j)
                    dxc[j] += wv * dyb[static_cast<long>(j) - sh];
            }
        }
    });
}

void tconv_forward(const TConv1D& c, const double* x, double* y, std::size_t B, std::size_t Lin,
                   int threads) {
    const std::size_t Lout = 2 * Lin;
    parallel_for(B * c.out_ch, threads, [&](std::size_t bc) {
        const std::size_t b = bc / c.out_ch;
        const std::size_t co = bc % c.out_ch;
        double* yb = y + bc * Lout;
        const double bias = c.b[co];
        for (std::size_t i = 0; i < Lout; ++i) yb[i] = bias;
        for (std::size_t ci = 0; ci < c.in_ch; ++ci) {
            const double* xc = x + (b * c.in_ch + ci) * Lin;
            const double w0 = c.w[(ci * c.out_ch + co) * 2 + 0];
            const double w1 = c.w[(ci * c.out_ch + co) * 2 + 1];
            for (std::size_t i = 0; i < Lin; ++i) {
                yb[2 * i] += w0 * xc[i];
                yb[2 * i + 1] += w1 * xc[i];
            }
        }
    });
}

void tconv_backward(TConv1D& c, const double* x, const double* dy, double* dx, std::size_t B,
                    std::size_t Lin, int threads) {
    const std::size_t Lout = 2 * Lin;
    parallel_for(c.out_ch, threads, [&](std::size_t co) {
        double gb = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double* dyb = dy + (b * c.out_ch + co) * Lout;
            for (std::size_t i = 0; i < Lout; ++i) gb += dyb[i];
            for (std::size_t ci = 0; ci < c.in_ch; ++ci) {
                const double* xc = x + (b * c.in_ch + ci) * Lin;
                double g0 = 0.0, g1 = 0.0;
                for (std::size_t i = 0; i < Lin; ++i) {
                    g0 += dyb[2 * i] * xc[i];
                    g1 += dyb[2 * i + 1] * xc[i];
                }
                c.gw[(ci * c.out_ch + co) * 2 + 0] += g0;
                c.gw[(ci * c.out_ch + co) * 2 + 1] += g1;
            }
        }
        c.gb[co] += gb;
    });
    parallel_for(B * c.in_ch, threads, [&](std::size_t bc) {
        const std::size_t b = bc / c.in_ch;
        const std::size_t ci = bc % c.in_ch;
        double* dxc = dx + bc * Lin;
        for (std::size_t i = 0; i < Lin; ++i) dxc[i] = 0.0;
        for (std::size_t co = 0; co < c.out_ch; ++co) {
            const double* dyb = dy + (b * c.out_ch + co) * Lout;
            const double w0 = c.w[(ci * c.out_ch + co) * 2 + 0];
            const double w1 = c.w[(ci * c.out_ch + co) * 2 + 1];
            for (std::size_t i = 0; i < Lin; ++i)
                dxc[i] += w0 * dyb[2 * i] + w1 * dyb[2 * i + 1];
        }
    });
}

void dense_forward(const Dense& d, const double* x, double* y, std::size_t B, int threads) {
    parallel_for(B, threads, [&](std::size_t b) {
        const double* xb = x + b * d.in;
        double* yb = y + b * d.out;
        for (std::size_t o = 0; o < d.out; ++o) {
            const double* wr = d.w.data() + o * d.in;
            double acc = d.b[o];
            for (std::size_t i = 0; i < d.in; ++i) acc += wr[i] * xb[i];
            yb[o] = acc;
        }
    });
}

void dense_backward(Dense& d, const double* x, const double* dy, double* dx, std::size_t B,
                    int threads) {
    parallel_for(d.out, threads, [&](std::size_t o) {
        double* gwr = d.gw.data() + o * d.in;
        double gb = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double g = dy[b * d.out + o];
            gb += g;
            const double* xb = x + b * d.in;
            for (std::size_t i = 0; i < d.in; ++i) gwr[i] += g * xb[i];
        }
        d.gb[o] += gb;
    });
    if (!dx) return;
    parallel_for(B, threads, [&](std::size_t b) {
        double* dxb = dx + b * d.in;
        for (std::size_t i = 0; i < d.in; ++i) dxb[i] = 0.0;
        for (std::size_t o = 0; o < d.out; ++o) {
            const double g = dy[b * d.out + o];
            const double* wr = d.w.data() + o * d.in;
            for (std::size_t i = 0; i < d.in; ++i) dxb[i] += g * wr[i];
        }
    });
}

void relu_inplace(double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
}

// dy *= 1[y > 0], using the post-activation values as the mask.
void relu_backward(const double* y, double* dy, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!(y[i] > 0.0)) dy[i] = 0.0;
}

void pool_forward(const double* x, double* y, std::uint8_t* idx, std::size_t rows,
                  std::size_t Lout) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * 2 * Lout;
        double* yr = y + r * Lout;
        std::uint8_t* ir = idx + r * Lout;
        for (std::size_t i = 0; i < Lout; ++i) {
            const double a = xr[2 * i], b = xr[2 * i + 1];
            if (a >= b) { // leftmost wins ties
                yr[i] = a;
                ir[i] = 0;
            } else {
                yr[i] = b;
                ir[i] = 1;
            }
        }
    }
}

void pool_backward(const double* dy, const std::uint8_t* idx, double* dx, std::size_t rows,
                   std::size_t Lout) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = dy + r * Lout;
        const std::uint8_t* ir = idx + r * Lout;
        double* dxr = dx + r * 2 * Lout;
        for (std::size_t i = 0; i < 2 * Lout; ++i) dxr[i] = 0.0;
        for (std::size_t i = 0; i < Lout; ++i) dxr[2 * i + ir[i]] = dyr[i];
    }
}

// ---- full network forward ------------------------------------------------

struct Ws {
    std::size_t B = 0;
    std::vector<std::vector<double>> e1, e2, pooled; // per encoder level
    std::vector<std::vector<std::uint8_t>> pidx;
    std::vector<double> feat;   // B*F, post ReLU
    std::vector<double> g;      // B*flat, post ReLU
    std::vector<double> b1, b2; // bottleneck activations
    std::vector<std::vector<double>> up, cat, d1, d2; // per decoder step
    std::vector<double> y; // B*L
};

void run_forward(const UNetModel& m, const double* x, std::size_t B, int threads, Ws& ws) {
    const auto& cfg = m.cfg;
    const std::size_t d = static_cast<std::size_t>(cfg.depth);
    const std::size_t L = cfg.segment_length;
    const std::size_t W = static_cast<std::size_t>(cfg.width);

    ws.B = B;
    ws.e1.assign(d, {});
    ws.e2.assign(d, {});
    ws.pooled.assign(d, {});
    ws.pidx.assign(d, {});
    ws.up.assign(d, {});
    ws.cat.assign(d, {});
    ws.d1.assign(d, {});
    ws.d2.assign(d, {});

    const double* cur = x;
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t lj = L >> j;
        const std::size_t wj = W << j;
        ws.e1[j].resize(B * wj * lj);
        conv_forward(m.enc[2 * j], cur, ws.e1[j].data(), B, lj, threads);
        relu_inplace(ws.e1[j].data(), ws.e1[j].size());
        ws.e2[j].resize(B * wj * lj);
        conv_forward(m.enc[2 * j + 1], ws.e1[j].data(), ws.e2[j].data(), B, lj, threads);
        relu_inplace(ws.e2[j].data(), ws.e2[j].size());
        ws.pooled[j].resize(B * wj * (lj / 2));
        ws.pidx[j].resize(B * wj * (lj / 2));
        pool_forward(ws.e2[j].data(), ws.pooled[j].data(), ws.pidx[j].data(), B * wj, lj / 2);
        cur = ws.pooled[j].data();
    }

    const std::size_t flat = cfg.flat_size();
    const std::size_t F = cfg.n_features;
    ws.feat.resize(B * F);
    dense_forward(m.compress, ws.pooled[d - 1].data(), ws.feat.data(), B, threads);
    relu_inplace(ws.feat.data(), ws.feat.size());
    ws.g.resize(B * flat);
    dense_forward(m.expand, ws.feat.data(), ws.g.data(), B, threads);
    relu_inplace(ws.g.data(), ws.g.size());

    const std::size_t ld = L >> d;
    const std::size_t wd = W << (d - 1);
    ws.b1.resize(B * 2 * wd * ld);
    conv_forward(m.bott1, ws.g.data(), ws.b1.data(), B, ld, threads);
    relu_inplace(ws.b1.data(), ws.b1.size());
    ws.b2.resize(B * 2 * wd * ld);
    conv_forward(m.bott2, ws.b1.data(), ws.b2.data(), B, ld, threads);
    relu_inplace(ws.b2.data(), ws.b2.size());

    const double* below = ws.b2.data();
    for (std::size_t s = 0; s < d; ++s) {
        const std::size_t j = d - 1 - s;
        const std::size_t lj = L >> j;
        const std::size_t wj = W << j;
        ws.up[s].resize(B * wj * lj);
        tconv_forward(m.ups[s], below, ws.up[s].data(), B, lj / 2, threads);
        // concat [up ; skip] along channels
        ws.cat[s].resize(B * 2 * wj * lj);
        for (std::size_t b = 0; b < B; ++b) {
            std::copy_n(ws.up[s].data() + b * wj * lj, wj * lj,
                        ws.cat[s].data() + b * 2 * wj * lj);
            std::copy_n(ws.e2[j].data() + b * wj * lj, wj * lj,
                        ws.cat[s].data() + b * 2 * wj * lj + wj * lj);
        }
        ws.d1[s].resize(B * wj * lj);
        conv_forward(m.dec[2 * s], ws.cat[s].data(), ws.d1[s].data(), B, lj, threads);
        relu_inplace(ws.d1[s].data(), ws.d1[s].size());
        ws.d2[s].resize(B * wj * lj);
        conv_forward(m.dec[2 * s + 1], ws.d1[s].data(), ws.d2[s].data(), B, lj, threads);
        relu_inplace(ws.d2[s].data(), ws.d2[s].size());
        below = ws.d2[s].data();
    }

    ws.y.resize(B * L);
    conv_forward(m.out_conv, ws.d2[d - 1].data(), ws.y.data(), B, L, threads);
}

} // namespace

ForwardResult forward(const UNetModel& m, const double* inputs, std::size_t batch, int threads) {
    if (batch == 0) throw InvalidArgument("forward: empty batch");
    Ws ws;
    run_forward(m, inputs, batch, threads, ws);
    ForwardResult r;
    r.recon = std::move(ws.y);
    r.features = std::move(ws.feat);
    for (double v : r.recon)
        if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, "forward: non-finite output");
    return r;
}

void zero_gradients(UNetModel& m) {
    for (auto& v : param_views(m)) std::fill(v.g->begin(), v.g->end(), 0.0);
}

double backward(UNetModel& m, const double* inputs, const double* targets, std::size_t batch,
                int threads) {
    if (batch == 0) throw InvalidArgument("backward: empty batch");
    const auto& cfg = m.cfg;
    const std::size_t d = static_cast<std::size_t>(cfg.depth);
    const std::size_t L = cfg.segment_length;
    const std::size_t W = static_cast<std::size_t>(cfg.width);
    const std::size_t B = batch;

    Ws ws;
    run_forward(m, inputs, B, threads, ws);

    // MSE over B*L and its gradient at the linear output.
    double loss = 0.0;
    std::vector<double> dy(B * L);
    const double scale = 2.0 / static_cast<double>(B * L);
    for (std::size_t i = 0; i < B * L; ++i) {
        const double e = ws.y[i] - targets[i];
        loss += e * e;
        dy[i] = scale * e;
    }
    loss /= static_cast<double>(B * L);

    // Output conv back to the last decoder block.
    std::vector<double> da(B * W * L);
    conv_backward(m.out_conv, ws.d2[d - 1].data(), dy.data(), da.data(), B, L, threads);

    // Decoder, shallowest step last -> walk back from s = d-1 to 0.
    std::vector<std::vector<double>> dskip(d);
    std::vector<double> dbelow;
    for (std::size_t s = d; s-- > 0;) {
        const std::size_t j = d - 1 - s;
        const std::size_t lj = L >> j;
        const std::size_t wj = W << j;
        // da currently holds dL/d(d2[s])
        relu_backward(ws.d2[s].data(), da.data(), ws.d2[s].size());
        std::vector<double> dd1(B * wj * lj);
        conv_backward(m.dec[2 * s + 1], ws.d1[s].data(), da.data(), dd1.data(), B, lj, threads);
        relu_backward(ws.d1[s].data(), dd1.data(), dd1.size());
        std::vector<double> dcat(B * 2 * wj * lj);
        conv_backward(m.dec[2 * s], ws.cat[s].data(), dd1.data(), dcat.data(), B, lj, threads);

        std::vector<double> dup(B * wj * lj);
        dskip[j].assign(B * wj * lj, 0.0);
        for (std::size_t b = 0; b < B; ++b) {
            std::copy_n(dcat.data() + b * 2 * wj * lj, wj * lj, dup.data() + b * wj * lj);
            std::copy_n(dcat.data() + b * 2 * wj * lj + wj * lj, wj * lj,
                        dskip[j].data() + b * wj * lj);
        }

        const double* below = (s == 0) ? ws.b2.data() : ws.d2[s - 1].data();
        const std::size_t below_ch = 2 * wj;
        dbelow.assign(B * below_ch * (lj / 2), 0.0);
        tconv_backward(m.ups[s], below, dup.data(), dbelow.data(), B, lj / 2, threads);
        da = std::move(dbelow); // dL/d(input of up) = dL/d(d2[s-1]) or dL/d(b2)
    }

    // Bottleneck.
    const std::size_t ld = L >> d;
    const std::size_t wd = W << (d - 1);
    relu_backward(ws.b2.data(), da.data(), ws.b2.size());
    std::vector<double> db1(B * 2 * wd * ld);
    conv_backward(m.bott2, ws.b1.data(), da.data(), db1.data(), B, ld, threads);
    relu_backward(ws.b1.data(), db1.data(), db1.size());
    std::vector<double> dg(B * wd * ld);
    conv_backward(m.bott1, ws.g.data(), db1.data(), dg.data(), B, ld, threads);

    // Dense pair.
    const std::size_t F = cfg.n_features;
    relu_backward(ws.g.data(), dg.data(), dg.size());
    std::vector<double> dfeat(B * F);
    dense_backward(m.expand, ws.feat.data(), dg.data(), dfeat.data(), B, threads);
    relu_backward(ws.feat.data(), dfeat.data(), dfeat.size());
    std::vector<double> dflat(B * cfg.flat_size());
    dense_backward(m.compress, ws.pooled[d - 1].data(), dfeat.data(), dflat.data(), B, threads);

    // Encoder, deepest level first.
    std::vector<double> dpooled = std::move(dflat);
    for (std::size_t j = d; j-- > 0;) {
        const std::size_t lj = L >> j;
        const std::size_t wj = W << j;
        std::vector<double> de2(B * wj * lj);
        pool_backward(dpooled.data(), ws.pidx[j].data(), de2.data(), B * wj, lj / 2);
        for (std::size_t i = 0; i < de2.size(); ++i) de2[i] += dskip[j][i];
        relu_backward(ws.e2[j].data(), de2.data(), de2.size());
        std::vector<double> de1(B * wj * lj);
        conv_backward(m.enc[2 * j + 1], ws.e1[j].data(), de2.data(), de1.data(), B, lj, threads);
        relu_backward(ws.e1[j].data(), de1.data(), de1.size());
        if (j > 0) {
            const std::size_t wprev = W << (j - 1);
            dpooled.assign(B * wprev * lj, 0.0);
            conv_backward(m.enc[2 * j], ws.pooled[j - 1].data(), de1.data(), dpooled.data(), B, lj,
                          threads);
        } else {
            conv_backward(m.enc[0], inputs, de1.data(), nullptr, B, lj, threads);
        }
    }
    return loss;
}

void adam_apply(std::vector<double>& w, const std::vector<double>& g, std::vector<double>& m,
                std::vector<double>& v, std::uint64_t t, const AdamHyper& hp) {
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
}

namespace {

double validation_mae(const UNetModel& m, const TrainData& val, int threads) {
    const std::size_t L = m.cfg.segment_length;
    const std::size_t C = val.c;
    double acc = 0.0;
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < val.n; start += chunk) {
        const std::size_t B = std::min(chunk, val.n - start);
        const ForwardResult r = forward(m, val.inputs.data() + start * C * L, B, threads);
        const double* t = val.targets.data() + start * L;
        for (std::size_t i = 0; i < B * L; ++i) acc += std::abs(r.recon[i] - t[i]);
    }
    return acc / static_cast<double>(val.n * L);
}

void snap_to_f32(UNetModel& m) {
    for (auto& view : param_views(m))
        for (double& x : *view.w) x = static_cast<double>(static_cast<float>(x));
}

} // namespace

TrainHistory train(UNetModel& model, const TrainData& train_set, const TrainData& val_set,
                   const TrainSpec& spec) {
    if (train_set.n == 0 || val_set.n == 0)
        throw InvalidArgument("train: empty training or validation set");
    if (spec.batch_size == 0) throw InvalidArgument("train: batch size must be >= 1");
    if (spec.patience > spec.max_epochs)
        throw InvalidArgument("train: patience exceeds max epochs");
    const std::size_t C = model.cfg.in_channels.size();
    const std::size_t L = model.cfg.segment_length;
    if (train_set.c != C || val_set.c != C)
        throw IncompatibleError("train: channel count does not match model config");
    if (train_set.l != L || val_set.l != L)
        throw IncompatibleError("train: segment length does not match model config");

    auto views = param_views(model);
    std::vector<std::vector<double>> adam_m(views.size()), adam_v(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) {
        adam_m[i].assign(views[i].w->size(), 0.0);
        adam_v[i].assign(views[i].w->size(), 0.0);
    }
    std::uint64_t step = 0;

    std::vector<std::size_t> order(train_set.n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(spec.seed);

    TrainHistory hist;
    hist.best_val_mae = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_params;
    int stall = 0;

    std::vector<double> bx(spec.batch_size * C * L);
    std::vector<double> bt(spec.batch_size * L);

    for (int epoch = 1; epoch <= spec.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < train_set.n; start += spec.batch_size) {
            const std::size_t B = std::min(spec.batch_size, train_set.n - start);
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t src = order[start + b];
                std::copy_n(train_set.inputs.data() + src * C * L, C * L, bx.data() + b * C * L);
                std::copy_n(train_set.targets.data() + src * L, L, bt.data() + b * L);
            }
            zero_gradients(model);
            loss_sum += backward(model, bx.data(), bt.data(), B, spec.threads);
            ++batches;
            ++step;
            if (spec.clip_norm > 0.0) {
                double sq = 0.0;
                for (auto& v : views)
                    for (double g : *v.g) sq += g * g;
                const double norm = std::sqrt(sq);
                if (norm > spec.clip_norm) {
                    const double scale = spec.clip_norm / norm;
                    for (auto& v : views)
                        for (double& g : *v.g) g *= scale;
                }
            }
            AdamHyper hp = spec.adam;
            if (spec.warmup_steps > 0 && step < static_cast<std::uint64_t>(spec.warmup_steps))
                hp.lr *= static_cast<double>(step) / static_cast<double>(spec.warmup_steps);
            for (std::size_t i = 0; i < views.size(); ++i)
                adam_apply(*views[i].w, *views[i].g, adam_m[i], adam_v[i], step, hp);
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_mse = loss_sum / static_cast<double>(batches);
        st.val_mae = validation_mae(model, val_set, spec.threads);
        hist.epochs.push_back(st);
        if (spec.verbose) {
            const double denorm = st.val_mae * (model.abp_gmax - model.abp_gmin);
            std::fprintf(stderr, "epoch %3d  train_mse %.6g  val_mae %.6g (%.4g mmHg)\n", epoch,
                         st.train_mse, st.val_mae, denorm);
        }

        if (st.val_mae < hist.best_val_mae) {
            hist.best_val_mae = st.val_mae;
            hist.best_epoch = epoch;
            best_params.clear();
            for (auto& v : views) best_params.push_back(*v.w);
            stall = 0;
        } else {
            ++stall;
            if (stall >= spec.patience) break;
        }
    }

    for (std::size_t i = 0; i < views.size(); ++i) *views[i].w = best_params[i];
    snap_to_f32(model);
    return hist;
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::string out = "epoch,train_mse,val_mae\n";
    char buf[96];
    for (const auto& e : history.epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.train_mse, e.val_mae);
        out += buf;
    }
    binio::spill(path, out);
}

TrainData dataset_from_store(const dataset::SegmentStore& store, const UNetModel& model,
                             bool need_targets) {
    const auto& cfg = model.cfg;
    if (store.segment_length != cfg.segment_length)
        throw IncompatibleError("store segment length does not match model config");
    std::vector<std::size_t> chan_idx;
    for (Channel c : cfg.in_channels) chan_idx.push_back(store.channel_index(c));

    TrainData out;
    out.n = store.segment_count();
    out.c = cfg.in_channels.size();
    out.l = cfg.segment_length;
    out.inputs.resize(out.n * out.c * out.l);
    for (std::size_t s = 0; s < out.n; ++s)
        for (std::size_t c = 0; c < chan_idx.size(); ++c) {
            const float* src = store.row(s, chan_idx[c]);
            double* dst = out.inputs.data() + (s * out.c + c) * out.l;
            for (std::size_t i = 0; i < out.l; ++i) dst[i] = src[i];
        }

    if (need_targets) {
        const std::size_t ti = store.channel_index(cfg.target);
        const bool norm = cfg.target == Channel::ABP;
        const double gmin = model.abp_gmin, gmax = model.abp_gmax;
        if (norm && !(gmax > gmin))
            throw InvalidArgument("dataset_from_store: ABP normalization range not set");
        out.targets.resize(out.n * out.l);
        for (std::size_t s = 0; s < out.n; ++s) {
            const float* src = store.row(s, ti);
            double* dst = out.targets.data() + s * out.l;
            for (std::size_t i = 0; i < out.l; ++i)
                dst[i] = norm ? (src[i] - gmin) / (gmax - gmin) : src[i];
        }
    }
    return out;
}

FeatureMatrix extract_features(const UNetModel& model, const dataset::SegmentStore& store,
                               int threads) {
    const TrainData data = dataset_from_store(store, model, false);
    const std::size_t F = model.cfg.n_features;

    FeatureMatrix fm;
    fm.rows = data.n;
    fm.cols = F;
    fm.ids = store.ids;
    fm.data.resize(data.n * F);
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < data.n; start += chunk) {
        const std::size_t B = std::min(chunk, data.n - start);
        const ForwardResult r =
            forward(model, data.inputs.data() + start * data.c * data.l, B, threads);
        for (std::size_t i = 0; i < B * F; ++i)
            fm.data[start * F + i] = static_cast<float>(r.features[i]);
    }
    return fm;
}

// ---- serialization ---------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'B', 'P', 'U', 'N'};
constexpr char kFeatMagic[4] = {'B', 'P', 'F', 'M'};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kFeatVersion = 1;

} // namespace

void save_model(const UNetModel& model, const std::string& path) {
    std::string out;
    out.append(kModelMagic, 4);
    binio::put_u32(out, kModelVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(model.cfg.depth));
    binio::put_u32(out, static_cast<std::uint32_t>(model.cfg.width));
    binio::put_u32(out, static_cast<std::uint32_t>(model.cfg.kernel));
    binio::put_u32(out, model.cfg.segment_length);
    binio::put_u32(out, model.cfg.n_features);
    out.push_back(static_cast<char>(model.cfg.in_channels.size()));
    for (Channel c : model.cfg.in_channels) out.push_back(static_cast<char>(c));
    out.push_back(static_cast<char>(model.cfg.target));
    binio::put_f64(out, model.abp_gmin);
    binio::put_f64(out, model.abp_gmax);

    auto views = param_views(const_cast<UNetModel&>(model));
    binio::put_u32(out, static_cast<std::uint32_t>(views.size()));
    for (const auto& v : views) {
        out.push_back(static_cast<char>(v.name.size()));
        out.append(v.name);
        binio::put_u32(out, static_cast<std::uint32_t>(v.shape.size()));
        for (std::size_t dim : v.shape) binio::put_u32(out, static_cast<std::uint32_t>(dim));
        for (double x : *v.w) binio::put_f32(out, static_cast<float>(x));
    }
    binio::spill(path, out);
}

UNetModel load_model(const std::string& path) {
    const std::string bytes = binio::slurp(path);
    binio::Reader r(bytes, path);
    if (std::memcmp(r.take(4), kModelMagic, 4) != 0) throw FormatError(path + ": bad magic");
    const std::uint32_t version = r.u32();
    if (version != kModelVersion)
        throw FormatError(path + ": unsupported model version " + std::to_string(version));

    UNetConfig cfg;
    cfg.depth = static_cast<int>(r.u32());
    cfg.width = static_cast<int>(r.u32());
    cfg.kernel = static_cast<int>(r.u32());
    cfg.segment_length = r.u32();
    cfg.n_features = r.u32();
    const std::uint8_t nch = r.u8();
    cfg.in_channels.clear();
    for (std::uint8_t i = 0; i < nch; ++i) {
        const std::uint8_t code = r.u8();
        if (code > 4) throw FormatError(path + ": unknown channel code");
        cfg.in_channels.push_back(static_cast<Channel>(code));
    }
    const std::uint8_t target_code = r.u8();
    if (target_code > 4) throw FormatError(path + ": unknown target code");
    cfg.target = static_cast<Channel>(target_code);

    UNetModel m;
    try {
        m = make_model(cfg);
    } catch (const InvalidArgument& e) {
        throw FormatError(path + ": invalid config: " + e.what());
    }
    m.abp_gmin = r.f64();
    m.abp_gmax = r.f64();

    auto views = param_views(m);
    const std::uint32_t n_blocks = r.u32();
    if (n_blocks != views.size()) throw FormatError(path + ": unexpected block count");
    for (auto& v : views) {
        const std::uint8_t name_len = r.u8();
        const std::string name(r.take(name_len), name_len);
        if (name != v.name) throw FormatError(path + ": unexpected block '" + name + "'");
        const std::uint32_t ndims = r.u32();
        if (ndims != v.shape.size()) throw FormatError(path + ": rank mismatch in " + name);
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < ndims; ++i) {
            const std::uint32_t dim = r.u32();
            if (dim != v.shape[i]) throw FormatError(path + ": shape mismatch in " + name);
            count *= dim;
        }
        for (std::size_t i = 0; i < count; ++i) {
            const float x = r.f32();
            if (!std::isfinite(x)) throw FormatError(path + ": non-finite parameter in " + name);
            (*v.w)[i] = x;
        }
    }
    r.expect_end();
    return m;
}

void save_features(const FeatureMatrix& fm, const std::string& path) {
    if (fm.ids.size() != fm.rows || fm.data.size() != fm.rows * fm.cols)
        throw InvalidArgument("save_features: inconsistent matrix");
    std::string out;
    out.append(kFeatMagic, 4);
    binio::put_u32(out, kFeatVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(fm.rows));
    binio::put_u32(out, static_cast<std::uint32_t>(fm.cols));
    for (std::uint64_t id : fm.ids) binio::put_u64(out, id);
    for (float x : fm.data) binio::put_f32(out, x);
    binio::spill(path, out);
}

FeatureMatrix load_features(const std::string& path) {
    const std::string bytes = binio::slurp(path);
    binio::Reader r(bytes, path);
    if (std::memcmp(r.take(4), kFeatMagic, 4) != 0) throw FormatError(path + ": bad magic");
    const std::uint32_t version = r.u32();
    if (version != kFeatVersion)
        throw FormatError(path + ": unsupported feature-file version " + std::to_string(version));
    FeatureMatrix fm;
    fm.rows = r.u32();
    fm.cols = r.u32();
    fm.ids.resize(fm.rows);
    for (auto& id : fm.ids) id = r.u64();
    fm.data.resize(fm.rows * fm.cols);
    for (auto& x : fm.data) {
        x = r.f32();
        if (!std::isfinite(x)) throw FormatError(path + ": non-finite feature");
    }
    r.expect_end();
    return fm;
}

} // namespace bpae::unet
