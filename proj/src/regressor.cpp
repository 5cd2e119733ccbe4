#include "bpae/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "bpae/binio.hpp"
#include "bpae/rng.hpp"

namespace bpae::regress {

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::Mlp: return "mlp";
        case Kind::Knn: return "knn";
        case Kind::SgdLinear: return "sgd_linear";
    }
    return "?";
}

Kind kind_from_name(const std::string& name) {
    if (name == "mlp") return Kind::Mlp;
    if (name == "knn") return Kind::Knn;
    if (name == "sgd_linear" || name == "sgd") return Kind::SgdLinear;
    throw InvalidArgument("unknown regressor kind: " + name);
}

const char* target_name(Target t) { return t == Target::Sbp ? "sbp" : "dbp"; }

Target target_from_name(const std::string& name) {
    if (name == "sbp") return Target::Sbp;
    if (name == "dbp") return Target::Dbp;
    throw InvalidArgument("unknown target: " + name);
}

namespace {

void standardize_stats(const double* x, std::size_t n, std::size_t f, std::vector<double>& mean,
                       std::vector<double>& std_out) {
    mean.assign(f, 0.0);
    std_out.assign(f, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) mean[j] += x[i * f + j];
    for (std::size_t j = 0; j < f; ++j) mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            const double d = x[i * f + j] - mean[j];
            std_out[j] += d * d;
        }
    for (std::size_t j = 0; j < f; ++j) {
        std_out[j] = n > 1 ? std::sqrt(std_out[j] / static_cast<double>(n - 1)) : 0.0;
        // zero-variance columns are passed through unscaled
        if (std_out[j] < 1e-12) std_out[j] = 1.0;
    }
}

std::vector<double> standardize(const double* x, std::size_t n, std::size_t f,
                                const std::vector<double>& mean, const std::vector<double>& std_in) {
    std::vector<double> out(n * f);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j)
            out[i * f + j] = (x[i * f + j] - mean[j]) / std_in[j];
    return out;
}

void adam_step(std::vector<double>& w, const std::vector<double>& g, std::vector<double>& m,
               std::vector<double>& v, std::uint64_t t, double lr) {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

void snap_f32(std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

} // namespace

double mlp_objective(const std::vector<double>& params, std::size_t f, std::size_t hidden,
                     const double* x, const double* y, std::size_t n, double alpha,
                     std::vector<double>* grad) {
    const std::size_t n_w1 = hidden * f;
    const double* w1 = params.data();
    const double* b1 = params.data() + n_w1;
    const double* w2 = params.data() + n_w1 + hidden;
    const double b2 = params[n_w1 + 2 * hidden];

    if (grad) grad->assign(params.size(), 0.0);
    double* gw1 = grad ? grad->data() : nullptr;
    double* gb1 = grad ? grad->data() + n_w1 : nullptr;
    double* gw2 = grad ? grad->data() + n_w1 + hidden : nullptr;

    double loss = 0.0;
    std::vector<double> h(hidden);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x + i * f;
        for (std::size_t o = 0; o < hidden; ++o) {
            const double* wr = w1 + o * f;
            double acc = b1[o];
            for (std::size_t j = 0; j < f; ++j) acc += wr[j] * xi[j];
            h[o] = acc > 0.0 ? acc : 0.0;
        }
        double pred = b2;
        for (std::size_t o = 0; o < hidden; ++o) pred += w2[o] * h[o];
        const double err = pred - y[i];
        loss += err * err;
        if (grad) {
            const double de = err / static_cast<double>(n);
            (*grad)[n_w1 + 2 * hidden] += de; // b2
            for (std::size_t o = 0; o < hidden; ++o) {
                gw2[o] += de * h[o];
                if (h[o] > 0.0) {
                    const double dh = de * w2[o];
                    gb1[o] += dh;
                    double* gr = gw1 + o * f;
                    for (std::size_t j = 0; j < f; ++j) gr[j] += dh * xi[j];
                }
            }
        }
    }
    loss /= 2.0 * static_cast<double>(n);

    // L2 penalty on weights (not biases).
    const double reg = alpha / static_cast<double>(n);
    double penalty = 0.0;
    for (std::size_t i = 0; i < n_w1; ++i) penalty += w1[i] * w1[i];
    for (std::size_t o = 0; o < hidden; ++o) penalty += w2[o] * w2[o];
    loss += 0.5 * reg * penalty;
    if (grad) {
        for (std::size_t i = 0; i < n_w1; ++i) gw1[i] += reg * w1[i];
        for (std::size_t o = 0; o < hidden; ++o) gw2[o] += reg * w2[o];
    }
    return loss;
}

double linear_objective(const std::vector<double>& params, std::size_t f, const double* x,
                        const double* y, std::size_t n, double alpha, std::vector<double>* grad) {
    const double* w = params.data();
    const double b = params[f];
    if (grad) grad->assign(params.size(), 0.0);

    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x + i * f;
        double pred = b;
        for (std::size_t j = 0; j < f; ++j) pred += w[j] * xi[j];
        const double err = pred - y[i];
        loss += err * err;
        if (grad) {
            const double de = err / static_cast<double>(n);
            (*grad)[f] += de;
            for (std::size_t j = 0; j < f; ++j) (*grad)[j] += de * xi[j];
        }
    }
    loss /= 2.0 * static_cast<double>(n);

    const double reg = alpha / static_cast<double>(n);
    double penalty = 0.0;
    for (std::size_t j = 0; j < f; ++j) penalty += w[j] * w[j];
    loss += 0.5 * reg * penalty;
    if (grad)
        for (std::size_t j = 0; j < f; ++j) (*grad)[j] += reg * w[j];
    return loss;
}

namespace {

// Minibatch training shared by the MLP and the linear model. Adam with the
// inverse-scaling factor lr0/sqrt(epoch) applied to its base rate.
void train_adam(std::vector<double>& params, std::size_t f, std::size_t hidden, // 0 => linear
                const std::vector<double>& xs, const std::vector<double>& ys, double alpha,
                double lr0, int max_iter, std::size_t batch, std::uint64_t seed) {
    const std::size_t n = ys.size();
    // auto batch: min(200, n) for the MLP, per-sample updates for linear SGD
    const std::size_t auto_bsz = hidden > 0 ? std::min<std::size_t>(200, n) : 1;
    const std::size_t bsz = batch == 0 ? auto_bsz : std::min(batch, n);

    std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0), grad;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);

    std::vector<double> bx(bsz * f), by(bsz);
    std::uint64_t step = 0;
    for (int epoch = 1; epoch <= max_iter; ++epoch) {
        const double lr = lr0 / std::sqrt(static_cast<double>(epoch));
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += bsz) {
            const std::size_t cur = std::min(bsz, n - start);
            for (std::size_t i = 0; i < cur; ++i) {
                std::copy_n(xs.data() + order[start + i] * f, f, bx.data() + i * f);
                by[i] = ys[order[start + i]];
            }
            if (hidden > 0)
                mlp_objective(params, f, hidden, bx.data(), by.data(), cur, alpha, &grad);
            else
                linear_objective(params, f, bx.data(), by.data(), cur, alpha, &grad);
            ++step;
            adam_step(params, grad, m, v, step, lr);
        }
    }
}

} // namespace

RegressorModel fit(const double* x, std::size_t n, std::size_t f, const double* y,
                   const FitSpec& spec) {
    if (n < 2) throw InvalidArgument("fit: need at least 2 training rows");
    if (f == 0) throw InvalidArgument("fit: zero feature width");
    for (std::size_t i = 0; i < n * f; ++i)
        if (!std::isfinite(x[i])) throw InvalidArgument("fit: non-finite feature");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(y[i])) throw InvalidArgument("fit: non-finite target");

    RegressorModel model;
    model.kind = spec.kind;
    model.target = spec.target;
    model.n_features = f;
    standardize_stats(x, n, f, model.feat_mean, model.feat_std);
    const std::vector<double> xs = standardize(x, n, f, model.feat_mean, model.feat_std);

    double ym = 0.0;
    for (std::size_t i = 0; i < n; ++i) ym += y[i];
    ym /= static_cast<double>(n);
    double yv = 0.0;
    for (std::size_t i = 0; i < n; ++i) yv += (y[i] - ym) * (y[i] - ym);
    double ys_dev = n > 1 ? std::sqrt(yv / static_cast<double>(n - 1)) : 0.0;
    if (ys_dev < 1e-12) ys_dev = 1.0;
    model.y_mean = ym;
    model.y_std = ys_dev;

    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = (y[i] - ym) / ys_dev;

    switch (spec.kind) {
        case Kind::Mlp: {
            model.hidden = spec.hidden;
            std::vector<double> params(spec.hidden * f + 2 * spec.hidden + 1, 0.0);
            Rng rng(spec.seed);
            const double bound1 = std::sqrt(6.0 / static_cast<double>(f));
            for (std::size_t i = 0; i < spec.hidden * f; ++i)
                params[i] = rng.uniform(-bound1, bound1);
            // output layer starts at zero: the net begins at the target mean
            train_adam(params, f, spec.hidden, xs, ys, spec.alpha, spec.lr0, spec.max_iter,
                       spec.batch, spec.seed + 1);
            snap_f32(params);
            model.w1.assign(params.begin(), params.begin() + static_cast<long>(spec.hidden * f));
            model.b1.assign(params.begin() + static_cast<long>(spec.hidden * f),
                            params.begin() + static_cast<long>(spec.hidden * f + spec.hidden));
            model.w2.assign(params.begin() + static_cast<long>(spec.hidden * f + spec.hidden),
                            params.begin() + static_cast<long>(spec.hidden * f + 2 * spec.hidden));
            model.b2 = params.back();
            break;
        }
        case Kind::SgdLinear: {
            std::vector<double> params(f + 1, 0.0);
            train_adam(params, f, 0, xs, ys, spec.alpha, spec.sgd_lr0, spec.max_iter, spec.batch,
                       spec.seed + 1);
            snap_f32(params);
            model.lin_w.assign(params.begin(), params.begin() + static_cast<long>(f));
            model.lin_b = params.back();
            break;
        }
        case Kind::Knn: {
            if (spec.knn_k == 0) throw InvalidArgument("fit: knn k must be >= 1");
            model.knn_k = std::min(spec.knn_k, n);
            model.knn_x = xs;
            model.knn_y.assign(y, y + n);
            snap_f32(model.knn_x);
            snap_f32(model.knn_y);
            break;
        }
    }
    return model;
}

std::vector<double> predict(const RegressorModel& model, const double* x, std::size_t m,
                            std::size_t f) {
    if (f != model.n_features)
        throw IncompatibleError("predict: feature width " + std::to_string(f) +
                                " does not match regressor (" +
                                std::to_string(model.n_features) + ")");
    std::vector<double> out(m);
    if (m == 0) return out;
    const std::vector<double> xs = standardize(x, m, f, model.feat_mean, model.feat_std);

    switch (model.kind) {
        case Kind::Mlp: {
            std::vector<double> h(model.hidden);
            for (std::size_t i = 0; i < m; ++i) {
                const double* xi = xs.data() + i * f;
                for (std::size_t o = 0; o < model.hidden; ++o) {
                    const double* wr = model.w1.data() + o * f;
                    double acc = model.b1[o];
                    for (std::size_t j = 0; j < f; ++j) acc += wr[j] * xi[j];
                    h[o] = acc > 0.0 ? acc : 0.0;
                }
                double pred = model.b2;
                for (std::size_t o = 0; o < model.hidden; ++o) pred += model.w2[o] * h[o];
                out[i] = model.y_mean + model.y_std * pred;
            }
            break;
        }
        case Kind::SgdLinear: {
            for (std::size_t i = 0; i < m; ++i) {
                const double* xi = xs.data() + i * f;
                double pred = model.lin_b;
                for (std::size_t j = 0; j < f; ++j) pred += model.lin_w[j] * xi[j];
                out[i] = model.y_mean + model.y_std * pred;
            }
            break;
        }
        case Kind::Knn: {
            const std::size_t n = model.knn_y.size();
            std::vector<std::pair<double, std::size_t>> dist(n);
            for (std::size_t i = 0; i < m; ++i) {
                const double* xi = xs.data() + i * f;
                for (std::size_t r = 0; r < n; ++r) {
                    const double* tr = model.knn_x.data() + r * f;
                    double d = 0.0;
                    for (std::size_t j = 0; j < f; ++j) {
                        const double diff = xi[j] - tr[j];
                        d += diff * diff;
                    }
                    dist[r] = {d, r};
                }
                // ties broken by smallest training index
                std::sort(dist.begin(), dist.end());
                double acc = 0.0;
                for (std::size_t kk = 0; kk < model.knn_k; ++kk) acc += model.knn_y[dist[kk].second];
                out[i] = acc / static_cast<double>(model.knn_k);
            }
            break;
        }
    }
    for (double v : out)
        if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, "predict: non-finite prediction");
    return out;
}

// ---- serialization ---------------------------------------------------------

namespace {

constexpr char kRegMagic[4] = {'B', 'P', 'R', 'G'};
constexpr std::uint32_t kRegVersion = 1;

void put_block(std::string& out, std::initializer_list<std::uint32_t> shape,
               const std::vector<double>& data) {
    binio::put_u32(out, static_cast<std::uint32_t>(shape.size()));
    std::size_t count = 1;
    for (std::uint32_t d : shape) {
        binio::put_u32(out, d);
        count *= d;
    }
    if (count != data.size()) throw Error(ErrorKind::Internal, "regressor block shape mismatch");
    for (double v : data) binio::put_f32(out, static_cast<float>(v));
}

std::vector<double> take_block(binio::Reader& r, std::initializer_list<std::uint32_t> shape) {
    const std::uint32_t ndims = r.u32();
    if (ndims != shape.size()) throw FormatError(r.name() + ": block rank mismatch");
    std::size_t count = 1;
    for (std::uint32_t want : shape) {
        const std::uint32_t got = r.u32();
        if (got != want) throw FormatError(r.name() + ": block shape mismatch");
        count *= got;
    }
    std::vector<double> data(count);
    for (auto& v : data) {
        const float x = r.f32();
        if (!std::isfinite(x)) throw FormatError(r.name() + ": non-finite parameter");
        v = x;
    }
    return data;
}

} // namespace

void save_regressor(const RegressorModel& model, const std::string& path) {
    std::string out;
    out.append(kRegMagic, 4);
    binio::put_u32(out, kRegVersion);
    out.push_back(static_cast<char>(model.kind));
    out.push_back(static_cast<char>(model.target));
    binio::put_u32(out, static_cast<std::uint32_t>(model.n_features));
    for (double v : model.feat_mean) binio::put_f64(out, v);
    for (double v : model.feat_std) binio::put_f64(out, v);
    binio::put_f64(out, model.y_mean);
    binio::put_f64(out, model.y_std);

    const auto F = static_cast<std::uint32_t>(model.n_features);
    switch (model.kind) {
        case Kind::Mlp: {
            const auto H = static_cast<std::uint32_t>(model.hidden);
            binio::put_u32(out, H);
            put_block(out, {H, F}, model.w1);
            put_block(out, {H}, model.b1);
            put_block(out, {H}, model.w2);
            put_block(out, {1}, {model.b2});
            break;
        }
        case Kind::Knn: {
            binio::put_u32(out, static_cast<std::uint32_t>(model.knn_k));
            const auto N = static_cast<std::uint32_t>(model.knn_y.size());
            binio::put_u32(out, N);
            put_block(out, {N, F}, model.knn_x);
            put_block(out, {N}, model.knn_y);
            break;
        }
        case Kind::SgdLinear: {
            put_block(out, {F}, model.lin_w);
            put_block(out, {1}, {model.lin_b});
            break;
        }
    }
    binio::spill(path, out);
}

RegressorModel load_regressor(const std::string& path) {
    const std::string bytes = binio::slurp(path);
    binio::Reader r(bytes, path);
    if (std::memcmp(r.take(4), kRegMagic, 4) != 0) throw FormatError(path + ": bad magic");
    const std::uint32_t version = r.u32();
    if (version != kRegVersion)
        throw FormatError(path + ": unsupported regressor version " + std::to_string(version));

    RegressorModel model;
    const std::uint8_t kind = r.u8();
    if (kind > 2) throw FormatError(path + ": unknown regressor kind");
    model.kind = static_cast<Kind>(kind);
    const std::uint8_t target = r.u8();
    if (target > 1) throw FormatError(path + ": unknown target");
    model.target = static_cast<Target>(target);
    model.n_features = r.u32();
    if (model.n_features == 0) throw FormatError(path + ": zero feature width");
    model.feat_mean.resize(model.n_features);
    for (auto& v : model.feat_mean) v = r.f64();
    model.feat_std.resize(model.n_features);
    for (auto& v : model.feat_std) v = r.f64();
    model.y_mean = r.f64();
    model.y_std = r.f64();

    const auto F = static_cast<std::uint32_t>(model.n_features);
    switch (model.kind) {
        case Kind::Mlp: {
            const std::uint32_t H = r.u32();
            model.hidden = H;
            model.w1 = take_block(r, {H, F});
            model.b1 = take_block(r, {H});
            model.w2 = take_block(r, {H});
            model.b2 = take_block(r, {1})[0];
            break;
        }
        case Kind::Knn: {
            model.knn_k = r.u32();
            const std::uint32_t N = r.u32();
            if (model.knn_k == 0 || model.knn_k > N)
                throw FormatError(path + ": invalid knn geometry");
            model.knn_x = take_block(r, {N, F});
            model.knn_y = take_block(r, {N});
            break;
        }
        case Kind::SgdLinear: {
            model.lin_w = take_block(r, {F});
            model.lin_b = take_block(r, {1})[0];
            break;
        }
    }
    r.expect_end();
    return model;
}

} // namespace bpae::regress
