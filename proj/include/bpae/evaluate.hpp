#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bpae/error.hpp"
#include "bpae/regressor.hpp"

namespace bpae::eval {

using regress::Target;

struct PredictionSet {
    std::vector<double> truth; // mmHg
    std::vector<double> pred;  // mmHg
    Target target = Target::Sbp;
    std::size_t n_subjects = 0;

    std::size_t size() const { return truth.size(); }
};

double mae(const PredictionSet& ps);

struct MeStd {
    double me = 0.0;  // mean of (pred - truth)
    double std = 0.0; // n-1 standard deviation of (pred - truth)
};

MeStd me_std(const PredictionSet& ps);

enum class BhsGrade : std::uint8_t { A, B, C, D };
const char* bhs_grade_name(BhsGrade g);

struct BhsResult {
    double pct5 = 0.0, pct10 = 0.0, pct15 = 0.0; // cumulative percentages
    BhsGrade grade = BhsGrade::D;
};

// Thresholds are inclusive: A >= 60/85/95, B >= 50/75/90, C >= 40/65/85.
BhsGrade bhs_grade_from_percentages(double pct5, double pct10, double pct15);
BhsResult bhs_grade(const PredictionSet& ps);

struct AamiResult {
    bool pass = false;
    std::vector<std::string> reasons; // violated clauses: "me", "std", "subjects"
};

// Pass iff |ME| <= 5, STD <= 8 and n_subjects >= 85 (all inclusive).
AamiResult aami_check(double me, double std, std::size_t n_subjects);

enum class BpClass : std::uint8_t { Normotension = 0, Prehypertension = 1, Hypertension = 2 };
const char* bp_class_name(BpClass c);

// SBP: <=120 normo, (120,140] pre, >140 hyper. DBP: <=80, (80,90], >90.
BpClass classify_bp(double value_mmhg, Target target);

struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, 3>, 3> counts{}; // [truth][pred]
    std::uint64_t total() const;
};

struct ClassScores {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    std::uint64_t support = 0;
};

struct ClassificationReport {
    ConfusionMatrix matrix;
    std::array<ClassScores, 3> per_class;
    double accuracy = 0.0;
};

ClassificationReport confusion_and_scores(const std::vector<BpClass>& truth,
                                          const std::vector<BpClass>& pred);

struct LinearFit {
    double beta0 = 0.0; // intercept
    double beta1 = 0.0; // slope
    double r = 0.0;     // sample Pearson correlation
    bool p_below_0_05 = false;
    bool defined = true; // false when a variable was constant (degenerate predictor)
};

// OLS of pred on truth plus the sample correlation; the p flag comes from a
// two-sided t test on r with n-2 degrees of freedom.
LinearFit pearson_and_fit(const PredictionSet& ps);

struct BlandAltmanStats {
    double mu = 0.0;
    double sigma = 0.0;
    double lower = 0.0; // mu - 1.96 sigma
    double upper = 0.0;
    std::vector<double> means; // (pred + truth) / 2 per pair
    std::vector<double> diffs; // pred - truth per pair
};

struct BlandAltman {
    BlandAltmanStats signed_diff;   // standard analysis
    BlandAltmanStats absolute_diff; // |pred - truth| variant, emitted alongside
};

BlandAltman bland_altman(const PredictionSet& ps);

struct HistogramBin {
    double lo = 0.0, hi = 0.0;
    std::uint64_t count = 0;
};

// Left-closed right-open bins over |pred - truth|.
std::vector<HistogramBin> error_histogram(const PredictionSet& ps, double bin_width);

struct TargetReport {
    Target target = Target::Sbp;
    std::size_t n = 0;
    std::size_t n_subjects = 0;
    double mae = 0.0;
    MeStd me_std;
    BhsResult bhs;
    AamiResult aami;
    ClassificationReport hypertension;
    LinearFit fit;
    BlandAltman bland_altman;
    std::vector<HistogramBin> error_hist;
};

TargetReport evaluate_target(const PredictionSet& ps, double hist_bin_width = 5.0);

// JSON serialization of one or two target reports.
std::string report_to_json(const std::vector<TargetReport>& reports);

// Plot data: regression_points.csv, bland_altman.csv, error_hist.csv inside dir.
void write_plot_csvs(const TargetReport& report, const PredictionSet& ps, const std::string& dir);

} // namespace bpae::eval
