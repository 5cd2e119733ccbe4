#include "bpae/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include <json.hpp>

#include "bpae/binio.hpp"

namespace bpae::eval {

namespace {

void check_set(const PredictionSet& ps, std::size_t min_n) {
    if (ps.truth.size() != ps.pred.size())
        throw InvalidArgument("prediction set: truth/pred size mismatch");
    if (ps.size() < min_n)
        throw InvalidArgument("prediction set: need at least " + std::to_string(min_n) + " pairs");
    for (std::size_t i = 0; i < ps.size(); ++i)
        if (!std::isfinite(ps.truth[i]) || !std::isfinite(ps.pred[i]))
            throw InvalidArgument("prediction set: non-finite value");
}

// Regularized incomplete beta via Lentz's continued fraction.
double betacf(double a, double b, double x) {
    const int kMaxIter = 300;
    const double kEps = 3e-14, kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

double incbeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log(1.0 - x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

// Two-sided p-value of the t statistic with df degrees of freedom.
double t_two_sided_p(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    return incbeta(df / 2.0, 0.5, df / (df + t * t));
}

} // namespace

double mae(const PredictionSet& ps) {
    check_set(ps, 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) acc += std::abs(ps.truth[i] - ps.pred[i]);
    return acc / static_cast<double>(ps.size());
}

MeStd me_std(const PredictionSet& ps) {
    check_set(ps, 1);
    MeStd out;
    const std::size_t n = ps.size();
    for (std::size_t i = 0; i < n; ++i) out.me += ps.pred[i] - ps.truth[i];
    out.me /= static_cast<double>(n);
    if (n < 2) throw InvalidArgument("me_std: STD requires at least 2 pairs");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = ps.pred[i] - ps.truth[i] - out.me;
        acc += d * d;
    }
    out.std = std::sqrt(acc / static_cast<double>(n - 1));
    return out;
}

const char* bhs_grade_name(BhsGrade g) {
    switch (g) {
        case BhsGrade::A: return "A";
        case BhsGrade::B: return "B";
        case BhsGrade::C: return "C";
        case BhsGrade::D: return "D";
    }
    return "?";
}

BhsGrade bhs_grade_from_percentages(double pct5, double pct10, double pct15) {
    if (pct5 >= 60.0 && pct10 >= 85.0 && pct15 >= 95.0) return BhsGrade::A;
    if (pct5 >= 50.0 && pct10 >= 75.0 && pct15 >= 90.0) return BhsGrade::B;
    if (pct5 >= 40.0 && pct10 >= 65.0 && pct15 >= 85.0) return BhsGrade::C;
    return BhsGrade::D;
}

BhsResult bhs_grade(const PredictionSet& ps) {
    check_set(ps, 1);
    std::uint64_t in5 = 0, in10 = 0, in15 = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const double e = std::abs(ps.pred[i] - ps.truth[i]);
        if (e <= 5.0) ++in5;
        if (e <= 10.0) ++in10;
        if (e <= 15.0) ++in15;
    }
    BhsResult out;
    const double n = static_cast<double>(ps.size());
    out.pct5 = 100.0 * static_cast<double>(in5) / n;
    out.pct10 = 100.0 * static_cast<double>(in10) / n;
    out.pct15 = 100.0 * static_cast<double>(in15) / n;
    out.grade = bhs_grade_from_percentages(out.pct5, out.pct10, out.pct15);
    return out;
}

AamiResult aami_check(double me, double std, std::size_t n_subjects) {
    AamiResult out;
    if (std::abs(me) > 5.0) out.reasons.push_back("me");
    if (std > 8.0) out.reasons.push_back("std");
    if (n_subjects < 85) out.reasons.push_back("subjects");
    out.pass = out.reasons.empty();
    return out;
}

const char* bp_class_name(BpClass c) {
    switch (c) {
        case BpClass::Normotension: return "normotension";
        case BpClass::Prehypertension: return "prehypertension";
        case BpClass::Hypertension: return "hypertension";
    }
    return "?";
}

BpClass classify_bp(double value_mmhg, Target target) {
    if (!std::isfinite(value_mmhg)) throw InvalidArgument("classify_bp: non-finite value");
    const double normo_max = target == Target::Sbp ? 120.0 : 80.0;
    const double pre_max = target == Target::Sbp ? 140.0 : 90.0;
    if (value_mmhg <= normo_max) return BpClass::Normotension;
    if (value_mmhg <= pre_max) return BpClass::Prehypertension;
    return BpClass::Hypertension;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
        for (std::uint64_t v : row) t += v;
    return t;
}

ClassificationReport confusion_and_scores(const std::vector<BpClass>& truth,
                                          const std::vector<BpClass>& pred) {
    if (truth.size() != pred.size())
        throw InvalidArgument("confusion_and_scores: length mismatch");
    if (truth.empty()) throw InvalidArgument("confusion_and_scores: empty class lists");

    ClassificationReport rep;
    for (std::size_t i = 0; i < truth.size(); ++i)
        ++rep.matrix.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];

    std::uint64_t trace = 0;
    for (std::size_t c = 0; c < 3; ++c) trace += rep.matrix.counts[c][c];
    rep.accuracy = static_cast<double>(trace) / static_cast<double>(truth.size());

    for (std::size_t c = 0; c < 3; ++c) {
        std::uint64_t tp = rep.matrix.counts[c][c], fp = 0, fn = 0, support = 0;
        for (std::size_t o = 0; o < 3; ++o) {
            support += rep.matrix.counts[c][o];
            if (o != c) {
                fn += rep.matrix.counts[c][o];
                fp += rep.matrix.counts[o][c];
            }
        }
        ClassScores& s = rep.per_class[c];
        s.support = support;
        s.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        s.recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        s.f1 = (2 * tp + fp + fn)
                   ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn)
                   : 0.0;
    }
    return rep;
}

LinearFit pearson_and_fit(const PredictionSet& ps) {
    check_set(ps, 3);
    const std::size_t n = ps.size();
    const auto& x = ps.truth;
    const auto& y = ps.pred;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0)
        throw UndefinedCorrelation("pearson_and_fit: constant variable");

    LinearFit fit;
    fit.r = sxy / std::sqrt(sxx * syy);
    fit.beta1 = sxy / sxx;
    fit.beta0 = my - fit.beta1 * mx;

    const double df = static_cast<double>(n - 2);
    const double denom = 1.0 - fit.r * fit.r;
    const double t = denom <= 0.0 ? std::numeric_limits<double>::infinity()
                                  : fit.r * std::sqrt(df / denom);
    fit.p_below_0_05 = t_two_sided_p(t, df) < 0.05;
    return fit;
}

namespace {

BlandAltmanStats ba_stats(const std::vector<double>& means, std::vector<double> diffs) {
    BlandAltmanStats st;
    const std::size_t n = diffs.size();
    for (double d : diffs) st.mu += d;
    st.mu /= static_cast<double>(n);
    double acc = 0.0;
    for (double d : diffs) acc += (d - st.mu) * (d - st.mu);
    st.sigma = std::sqrt(acc / static_cast<double>(n - 1));
    st.lower = st.mu - 1.96 * st.sigma;
    st.upper = st.mu + 1.96 * st.sigma;
    st.means = means;
    st.diffs = std::move(diffs);
    return st;
}

} // namespace

BlandAltman bland_altman(const PredictionSet& ps) {
    check_set(ps, 2);
    const std::size_t n = ps.size();
    std::vector<double> means(n), diffs(n), abs_diffs(n);
    for (std::size_t i = 0; i < n; ++i) {
        means[i] = (ps.pred[i] + ps.truth[i]) / 2.0;
        diffs[i] = ps.pred[i] - ps.truth[i];
        abs_diffs[i] = std::abs(diffs[i]);
    }
    BlandAltman out;
    out.signed_diff = ba_stats(means, std::move(diffs));
    out.absolute_diff = ba_stats(means, std::move(abs_diffs));
    return out;
}

std::vector<HistogramBin> error_histogram(const PredictionSet& ps, double bin_width) {
    check_set(ps, 1);
    if (!(bin_width > 0.0)) throw InvalidArgument("error_histogram: bin width must be positive");
    double max_err = 0.0;
    std::vector<double> errs(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        errs[i] = std::abs(ps.pred[i] - ps.truth[i]);
        max_err = std::max(max_err, errs[i]);
    }
    const std::size_t n_bins = static_cast<std::size_t>(std::floor(max_err / bin_width)) + 1;
    std::vector<HistogramBin> bins(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        bins[b].lo = static_cast<double>(b) * bin_width;
        bins[b].hi = static_cast<double>(b + 1) * bin_width;
    }
    for (double e : errs) {
        std::size_t b = static_cast<std::size_t>(std::floor(e / bin_width));
        if (b >= n_bins) b = n_bins - 1; // max value falls in the last bin
        ++bins[b].count;
    }
    return bins;
}

TargetReport evaluate_target(const PredictionSet& ps, double hist_bin_width) {
    check_set(ps, 3);
    TargetReport rep;
    rep.target = ps.target;
    rep.n = ps.size();
    rep.n_subjects = ps.n_subjects;
    rep.mae = mae(ps);
    rep.me_std = me_std(ps);
    rep.bhs = bhs_grade(ps);
    rep.aami = aami_check(rep.me_std.me, rep.me_std.std, ps.n_subjects);

    std::vector<BpClass> truth_cls(ps.size()), pred_cls(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        truth_cls[i] = classify_bp(ps.truth[i], ps.target);
        pred_cls[i] = classify_bp(ps.pred[i], ps.target);
    }
    rep.hypertension = confusion_and_scores(truth_cls, pred_cls);
    try {
        rep.fit = pearson_and_fit(ps);
    } catch (const UndefinedCorrelation&) {
        rep.fit = LinearFit{};
        rep.fit.defined = false;
    }
    rep.bland_altman = bland_altman(ps);
    rep.error_hist = error_histogram(ps, hist_bin_width);
    return rep;
}

namespace {

nlohmann::ordered_json ba_json(const BlandAltmanStats& st) {
    return {{"mu", st.mu}, {"sigma", st.sigma}, {"lower", st.lower}, {"upper", st.upper}};
}

nlohmann::ordered_json target_json(const TargetReport& r) {
    nlohmann::ordered_json j;
    j["target"] = regress::target_name(r.target);
    j["n"] = r.n;
    j["n_subjects"] = r.n_subjects;
    j["mae"] = r.mae;
    j["me"] = r.me_std.me;
    j["std"] = r.me_std.std;
    j["bhs"] = {{"pct5", r.bhs.pct5},
                {"pct10", r.bhs.pct10},
                {"pct15", r.bhs.pct15},
                {"grade", bhs_grade_name(r.bhs.grade)}};
    j["aami"] = {{"pass", r.aami.pass}, {"violations", r.aami.reasons}};
    nlohmann::ordered_json cls;
    cls["accuracy"] = r.hypertension.accuracy;
    cls["confusion"] = r.hypertension.matrix.counts;
    for (std::size_t c = 0; c < 3; ++c) {
        const auto& s = r.hypertension.per_class[c];
        cls[bp_class_name(static_cast<BpClass>(c))] = {{"precision", s.precision},
                                                       {"recall", s.recall},
                                                       {"f1", s.f1},
                                                       {"support", s.support}};
    }
    j["hypertension"] = cls;
    j["regression"] = {{"defined", r.fit.defined},
                       {"beta0", r.fit.beta0},
                       {"beta1", r.fit.beta1},
                       {"r", r.fit.r},
                       {"p_below_0_05", r.fit.p_below_0_05}};
    j["bland_altman"] = {{"signed", ba_json(r.bland_altman.signed_diff)},
                         {"absolute", ba_json(r.bland_altman.absolute_diff)}};
    nlohmann::ordered_json hist = nlohmann::ordered_json::array();
    for (const auto& b : r.error_hist)
        hist.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
    j["error_histogram"] = hist;
    return j;
}

} // namespace

std::string report_to_json(const std::vector<TargetReport>& reports) {
    nlohmann::ordered_json j;
    for (const auto& r : reports) j[regress::target_name(r.target)] = target_json(r);
    return j.dump(2) + "\n";
}

void write_plot_csvs(const TargetReport& report, const PredictionSet& ps, const std::string& dir) {
    std::filesystem::create_directories(dir);
    char buf[128];

    std::string reg = "truth,pred\n";
    for (std::size_t i = 0; i < ps.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g\n", ps.truth[i], ps.pred[i]);
        reg += buf;
    }
    binio::spill(dir + "/regression_points.csv", reg);

    const auto& ba = report.bland_altman.signed_diff;
    std::string bas = "mean,diff\n";
    for (std::size_t i = 0; i < ba.means.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g\n", ba.means[i], ba.diffs[i]);
        bas += buf;
    }
    binio::spill(dir + "/bland_altman.csv", bas);

    std::string hist = "bin_lo,bin_hi,count\n";
    for (const auto& b : report.error_hist) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%llu\n", b.lo, b.hi,
                      static_cast<unsigned long long>(b.count));
        hist += buf;
    }
    binio::spill(dir + "/error_hist.csv", hist);
}

} // namespace bpae::eval
