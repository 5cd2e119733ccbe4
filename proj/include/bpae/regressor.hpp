#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bpae/error.hpp"

namespace bpae::regress {

enum class Kind : std::uint8_t { Mlp = 0, Knn = 1, SgdLinear = 2 };
enum class Target : std::uint8_t { Sbp = 0, Dbp = 1 };

const char* kind_name(Kind k);
Kind kind_from_name(const std::string& name);
const char* target_name(Target t);
Target target_from_name(const std::string& name);

struct FitSpec {
    Kind kind = Kind::Mlp;
    Target target = Target::Sbp;
    // MLP: Adam solver, ReLU hidden layer, inverse-scaling rate lr0/sqrt(epoch).
    std::size_t hidden = 100;
    double alpha = 1e-4; // L2 penalty
    double lr0 = 1e-3;
    int max_iter = 500;    // epochs, no early stopping
    std::size_t batch = 0; // 0 = auto: min(200, n)
    // kNN
    std::size_t knn_k = 5;
    // linear SGD
    double sgd_lr0 = 0.01;
    std::uint64_t seed = 0;
};

// One trained single-target regressor. Feature and target standardization
// statistics are frozen at fit time and applied inside predict.
struct RegressorModel {
    Kind kind = Kind::Mlp;
    Target target = Target::Sbp;
    std::size_t n_features = 0;
    std::vector<double> feat_mean, feat_std;
    double y_mean = 0.0, y_std = 1.0;

    // MLP
    std::size_t hidden = 0;
    std::vector<double> w1, b1, w2; // w1: hidden x F, w2: hidden
    double b2 = 0.0;

    // kNN: standardized training matrix plus raw targets
    std::size_t knn_k = 0;
    std::vector<double> knn_x;
    std::vector<double> knn_y;

    // linear SGD
    std::vector<double> lin_w;
    double lin_b = 0.0;
};

// x: n rows of F features (row-major); y: n targets in mmHg.
RegressorModel fit(const double* x, std::size_t n, std::size_t f, const double* y,
                   const FitSpec& spec);

std::vector<double> predict(const RegressorModel& model, const double* x, std::size_t m,
                            std::size_t f);

// Two-layer ReLU network objective used by fit: mean squared error / 2 plus
// (alpha / 2n) * (||W1||^2 + ||W2||^2). params = [W1, b1, W2, b2] flattened.
// Fills grad (same layout) when non-null; returns the objective value.
double mlp_objective(const std::vector<double>& params, std::size_t f, std::size_t hidden,
                     const double* x, const double* y, std::size_t n, double alpha,
                     std::vector<double>* grad);

// Linear counterpart; params = [w, b].
double linear_objective(const std::vector<double>& params, std::size_t f, const double* x,
                        const double* y, std::size_t n, double alpha, std::vector<double>* grad);

void save_regressor(const RegressorModel& model, const std::string& path);
RegressorModel load_regressor(const std::string& path);

} // namespace bpae::regress
