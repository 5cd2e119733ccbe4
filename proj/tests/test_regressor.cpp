#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "bpae/regressor.hpp"
#include "bpae/rng.hpp"

using namespace bpae;
using namespace bpae::regress;

namespace {

std::string tmp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "bpae_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

struct Toy {
    std::vector<double> x; // n * f
    std::vector<double> y; // n
    std::size_t n = 0, f = 0;
};

Toy linear_toy(std::size_t n, std::size_t f, std::uint64_t seed) {
    Toy t;
    t.n = n;
    t.f = f;
    t.x.resize(n * f);
    t.y.resize(n);
    Rng rng(seed);
    std::vector<double> w(f);
    for (auto& v : w) v = rng.uniform(-3.0, 3.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 120.0;
        for (std::size_t j = 0; j < f; ++j) {
            t.x[i * f + j] = rng.uniform(-1.0, 1.0);
            acc += w[j] * t.x[i * f + j];
        }
        t.y[i] = acc;
    }
    return t;
}

} // namespace

TEST_CASE("mlp_objective gradient matches finite differences (F=5, hidden=3)") {
    const std::size_t f = 5, hidden = 3, n = 7;
    Rng rng(3);
    std::vector<double> params(hidden * f + 2 * hidden + 1);
    for (auto& p : params) p = rng.uniform(-0.8, 0.8);
    std::vector<double> x(n * f), y(n);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    for (auto& v : y) v = rng.uniform(-1.0, 1.0);

    std::vector<double> grad;
    mlp_objective(params, f, hidden, x.data(), y.data(), n, 1e-4, &grad);

    double max_rel = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<double> p = params;
        p[i] += h;
        const double up = mlp_objective(p, f, hidden, x.data(), y.data(), n, 1e-4, nullptr);
        p[i] -= 2 * h;
        const double dn = mlp_objective(p, f, hidden, x.data(), y.data(), n, 1e-4, nullptr);
        const double fd = (up - dn) / (2 * h);
        const double rel =
            std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("linear_objective gradient matches finite differences") {
    const std::size_t f = 4, n = 6;
    Rng rng(9);
    std::vector<double> params(f + 1);
    for (auto& p : params) p = rng.uniform(-1.0, 1.0);
    std::vector<double> x(n * f), y(n);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    for (auto& v : y) v = rng.uniform(-1.0, 1.0);

    std::vector<double> grad;
    linear_objective(params, f, x.data(), y.data(), n, 1e-4, &grad);
    const double h = 1e-6;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<double> p = params;
        p[i] += h;
        const double up = linear_objective(p, f, x.data(), y.data(), n, 1e-4, nullptr);
        p[i] -= 2 * h;
        const double dn = linear_objective(p, f, x.data(), y.data(), n, 1e-4, nullptr);
        const double fd = (up - dn) / (2 * h);
        CHECK(std::abs(fd - grad[i]) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("constant targets are recovered by every kind") {
    Rng rng(5);
    const std::size_t n = 40, f = 6;
    std::vector<double> x(n * f);
    for (auto& v : x) v = rng.uniform(-2.0, 2.0);
    const std::vector<double> y(n, 137.5);

    for (Kind kind : {Kind::Mlp, Kind::Knn, Kind::SgdLinear}) {
        FitSpec spec;
        spec.kind = kind;
        spec.seed = 11;
        const RegressorModel model = fit(x.data(), n, f, y.data(), spec);
        const auto preds = predict(model, x.data(), n, f);
        for (double p : preds) CHECK(std::abs(p - 137.5) <= 0.5);
    }
}

TEST_CASE("knn with k=1 reproduces training targets exactly") {
    const Toy t = linear_toy(25, 4, 7);
    FitSpec spec;
    spec.kind = Kind::Knn;
    spec.knn_k = 1;
    const RegressorModel model = fit(t.x.data(), t.n, t.f, t.y.data(), spec);
    const auto preds = predict(model, t.x.data(), t.n, t.f);
    for (std::size_t i = 0; i < t.n; ++i)
        CHECK(preds[i] == doctest::Approx(t.y[i]).epsilon(1e-6));
}

TEST_CASE("knn prediction invariant under training permutation") {
    const Toy t = linear_toy(30, 3, 13);
    FitSpec spec;
    spec.kind = Kind::Knn;
    spec.knn_k = 4;
    const RegressorModel a = fit(t.x.data(), t.n, t.f, t.y.data(), spec);

    std::vector<std::size_t> perm(t.n);
    for (std::size_t i = 0; i < t.n; ++i) perm[i] = (i * 7 + 3) % t.n;
    std::vector<double> xp(t.n * t.f), yp(t.n);
    for (std::size_t i = 0; i < t.n; ++i) {
        std::copy_n(t.x.data() + perm[i] * t.f, t.f, xp.data() + i * t.f);
        yp[i] = t.y[perm[i]];
    }
    const RegressorModel b = fit(xp.data(), t.n, t.f, yp.data(), spec);

    Rng rng(2);
    std::vector<double> q(5 * t.f);
    for (auto& v : q) v = rng.uniform(-1.0, 1.0);
    const auto pa = predict(a, q.data(), 5, t.f);
    const auto pb = predict(b, q.data(), 5, t.f);
    for (std::size_t i = 0; i < 5; ++i) CHECK(pa[i] == doctest::Approx(pb[i]).epsilon(1e-9));
}

TEST_CASE("linear sgd recovers an exactly linear map") {
    const Toy t = linear_toy(200, 5, 21);
    FitSpec spec;
    spec.kind = Kind::SgdLinear;
    spec.seed = 3;
    const RegressorModel model = fit(t.x.data(), t.n, t.f, t.y.data(), spec);
    const auto preds = predict(model, t.x.data(), t.n, t.f);
    double mae = 0.0;
    for (std::size_t i = 0; i < t.n; ++i) mae += std::abs(preds[i] - t.y[i]);
    mae /= static_cast<double>(t.n);
    CHECK(mae < 0.1);
}

TEST_CASE("mlp fit is deterministic per seed") {
    const Toy t = linear_toy(50, 4, 33);
    FitSpec spec;
    spec.kind = Kind::Mlp;
    spec.hidden = 10;
    spec.max_iter = 30;
    spec.seed = 17;
    const RegressorModel a = fit(t.x.data(), t.n, t.f, t.y.data(), spec);
    const RegressorModel b = fit(t.x.data(), t.n, t.f, t.y.data(), spec);
    CHECK(a.w1 == b.w1);
    CHECK(a.b1 == b.b1);
    CHECK(a.w2 == b.w2);
    CHECK(a.b2 == b.b2);

    spec.seed = 18;
    const RegressorModel c = fit(t.x.data(), t.n, t.f, t.y.data(), spec);
    CHECK(a.w1 != c.w1);
}

TEST_CASE("per-target isolation") {
    const Toy t = linear_toy(30, 3, 41);
    FitSpec spec;
    spec.kind = Kind::SgdLinear;
    spec.target = Target::Sbp;
    const RegressorModel sbp_model = fit(t.x.data(), t.n, t.f, t.y.data(), spec);
    CHECK(sbp_model.target == Target::Sbp);
    spec.target = Target::Dbp;
    const RegressorModel dbp_model = fit(t.x.data(), t.n, t.f, t.y.data(), spec);
    CHECK(dbp_model.target == Target::Dbp);
    // same inputs, same seed: identical parameters regardless of target tag
    CHECK(sbp_model.lin_w == dbp_model.lin_w);
}

TEST_CASE("predict edge cases") {
    const Toy t = linear_toy(20, 4, 5);
    FitSpec spec;
    spec.kind = Kind::Knn;
    const RegressorModel model = fit(t.x.data(), t.n, t.f, t.y.data(), spec);

    CHECK(predict(model, t.x.data(), 0, t.f).empty());

    std::vector<double> two(2 * t.f);
    std::copy_n(t.x.data(), t.f, two.data());
    std::copy_n(t.x.data(), t.f, two.data() + t.f);
    const auto p = predict(model, two.data(), 2, t.f);
    CHECK(p[0] == p[1]);

    CHECK_THROWS_AS(predict(model, t.x.data(), 2, t.f + 1), IncompatibleError);
}

TEST_CASE("standardization stats frozen at fit; refit on standardized features is stable") {
    const Toy t = linear_toy(60, 3, 51);
    FitSpec spec;
    spec.kind = Kind::SgdLinear;
    spec.seed = 2;
    const RegressorModel a = fit(t.x.data(), t.n, t.f, t.y.data(), spec);

    std::vector<double> xs(t.n * t.f);
    for (std::size_t i = 0; i < t.n; ++i)
        for (std::size_t j = 0; j < t.f; ++j)
            xs[i * t.f + j] = (t.x[i * t.f + j] - a.feat_mean[j]) / a.feat_std[j];
    const RegressorModel b = fit(xs.data(), t.n, t.f, t.y.data(), spec);
    for (std::size_t j = 0; j < t.f; ++j) {
        CHECK(std::abs(b.feat_mean[j]) < 1e-9);
        CHECK(b.feat_std[j] == doctest::Approx(1.0).epsilon(1e-9));
    }

    const auto pa = predict(a, t.x.data(), t.n, t.f);
    const auto pb = predict(b, xs.data(), t.n, t.f);
    for (std::size_t i = 0; i < t.n; ++i)
        CHECK(pa[i] == doctest::Approx(pb[i]).epsilon(1e-9));
}

TEST_CASE("zero-variance feature columns are tolerated") {
    Rng rng(6);
    const std::size_t n = 20, f = 3;
    std::vector<double> x(n * f);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i * f + 0] = rng.uniform(-1.0, 1.0);
        x[i * f + 1] = 4.2; // constant column
        x[i * f + 2] = rng.uniform(-1.0, 1.0);
        y[i] = 100.0 + 10.0 * x[i * f + 0];
    }
    FitSpec spec;
    spec.kind = Kind::SgdLinear;
    const RegressorModel model = fit(x.data(), n, f, y.data(), spec);
    CHECK(model.feat_std[1] == 1.0);
    const auto preds = predict(model, x.data(), n, f);
    for (double p : preds) CHECK(std::isfinite(p));
}

TEST_CASE("regressor save/load round trip") {
    const Toy t = linear_toy(40, 5, 71);
    for (Kind kind : {Kind::Mlp, Kind::Knn, Kind::SgdLinear}) {
        FitSpec spec;
        spec.kind = kind;
        spec.hidden = 8;
        spec.max_iter = 20;
        spec.target = Target::Dbp;
        spec.seed = 4;
        const RegressorModel model = fit(t.x.data(), t.n, t.f, t.y.data(), spec);
        const std::string path = tmp_path(std::string("reg_") + kind_name(kind) + ".bprg");
        save_regressor(model, path);
        const RegressorModel back = load_regressor(path);
        CHECK(back.kind == kind);
        CHECK(back.target == Target::Dbp);
        CHECK(back.n_features == t.f);

        Rng rng(1);
        std::vector<double> q(3 * t.f);
        for (auto& v : q) v = rng.uniform(-1.0, 1.0);
        const auto pa = predict(model, q.data(), 3, t.f);
        const auto pb = predict(back, q.data(), 3, t.f);
        CHECK(pa == pb); // bitwise: parameters are f32-snapped at fit time
    }
}

TEST_CASE("fit input validation") {
    FitSpec spec;
    std::vector<double> x(4, 0.0), y(1, 1.0);
    CHECK_THROWS_AS(fit(x.data(), 1, 4, y.data(), spec), InvalidArgument);
    std::vector<double> bad = {0.0, std::nan(""), 0.0, 0.0};
    std::vector<double> y2 = {1.0, 2.0};
    CHECK_THROWS_AS(fit(bad.data(), 2, 2, y2.data(), spec), InvalidArgument);
}
