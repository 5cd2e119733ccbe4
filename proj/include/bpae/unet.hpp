#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bpae/dataset.hpp"
#include "bpae/signal.hpp"

namespace bpae::unet {

using signal::Channel;

struct UNetConfig {
    int depth = 1;   // supported 1..4
    int width = 128; // encoder filters at the first level
    int kernel = 3;  // odd
    std::vector<Channel> in_channels = {Channel::PPG, Channel::VPG, Channel::APG, Channel::ECG};
    std::uint32_t segment_length = 1024;
    std::uint32_t n_features = 1024;
    Channel target = Channel::ABP;

    void validate() const;
    std::size_t flat_size() const; // (L >> depth) * (width << (depth - 1))
};

struct ParamCounts {
    std::uint64_t conv_params = 0;  // every convolution/transposed convolution, with biases
    std::uint64_t dense_params = 0; // compress + expand, with biases
    std::uint64_t compress_dense_weights = 0; // weights only, no bias
    std::uint64_t total = 0;
};

ParamCounts param_count(const UNetConfig& cfg);

struct Conv1D {
    std::size_t in_ch = 0, out_ch = 0, k = 1;
    std::vector<double> w, b;   // w[(co*in + ci)*k + t]
    std::vector<double> gw, gb; // gradients
};

// Kernel 2, stride 2 upsampling convolution; w[(ci*out + co)*2 + t].
struct TConv1D {
    std::size_t in_ch = 0, out_ch = 0;
    std::vector<double> w, b;
    std::vector<double> gw, gb;
};

struct Dense {
    std::size_t in = 0, out = 0;
    std::vector<double> w, b; // w[o*in + i]
    std::vector<double> gw, gb;
};

// All trainable state of the autoencoder plus the ABP normalization it was
// trained with (needed to denormalize reconstructions later).
struct UNetModel {
    UNetConfig cfg;
    std::vector<Conv1D> enc;  // 2 per level
    Conv1D bott1, bott2;
    Dense compress, expand;
    std::vector<TConv1D> ups; // deepest level first
    std::vector<Conv1D> dec;  // 2 per level, deepest first
    Conv1D out_conv;
    double abp_gmin = 0.0, abp_gmax = 1.0;
};

struct ParamView {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double>* w = nullptr;
    std::vector<double>* g = nullptr;
};

std::vector<ParamView> param_views(UNetModel& model);

// He-uniform weights (bound sqrt(6/fan_in)), zero biases; deterministic per seed.
UNetModel init_model(const UNetConfig& cfg, std::uint64_t seed);

struct ForwardResult {
    std::vector<double> recon;    // B * L
    std::vector<double> features; // B * F, post-ReLU dense activations
};

// inputs laid out sample-major then channel-major: inputs[(b*C + c)*L + i].
ForwardResult forward(const UNetModel& model, const double* inputs, std::size_t batch,
                      int threads = 1);

// Runs forward, fills every layer's gradients with d(MSE)/d(param) for the
// batch (mean over B*L), and returns the batch MSE. targets: B * L.
double backward(UNetModel& model, const double* inputs, const double* targets, std::size_t batch,
                int threads = 1);

void zero_gradients(UNetModel& model);

struct AdamHyper {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// One Adam update of w given gradient g and per-parameter moments m, v at
// step t (1-based): the standard bias-corrected form.
void adam_apply(std::vector<double>& w, const std::vector<double>& g, std::vector<double>& m,
                std::vector<double>& v, std::uint64_t t, const AdamHyper& hp);

struct TrainSpec {
    std::size_t batch_size = 64;
    int max_epochs = 100;
    int patience = 15;
    AdamHyper adam;
    double clip_norm = 0.0;  // > 0 clips the global gradient norm per step
    int warmup_steps = 0;    // linear learning-rate ramp over the first steps
    std::uint64_t seed = 0;
    int threads = 1;
    bool verbose = false;
};

struct EpochStats {
    int epoch = 0;
    double train_mse = 0.0;
    double val_mae = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = 0; // 1-based
    double best_val_mae = 0.0;
};

// Inputs n*C*L, targets n*L (already normalized by the caller).
struct TrainData {
    std::size_t n = 0, c = 0, l = 0;
    std::vector<double> inputs;
    std::vector<double> targets;
};

// Adam + MSE with early stopping on validation MAE; restores the best-epoch
// parameters and rounds them to f32 precision (the serialized precision) so
// save/load round-trips reproduce the in-memory model exactly.
TrainHistory train(UNetModel& model, const TrainData& train_set, const TrainData& val_set,
                   const TrainSpec& spec);

void write_history_csv(const TrainHistory& history, const std::string& path);

struct FeatureMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<float> data; // row-major
    std::vector<std::uint64_t> ids;
};

// Builds the model-input tensor from a store (channels in config order) and
// the normalized target rows when the target channel is present.
TrainData dataset_from_store(const dataset::SegmentStore& store, const UNetModel& model,
                             bool need_targets);

FeatureMatrix extract_features(const UNetModel& model, const dataset::SegmentStore& store,
                               int threads = 1);

void save_model(const UNetModel& model, const std::string& path);
UNetModel load_model(const std::string& path);

void save_features(const FeatureMatrix& fm, const std::string& path);
FeatureMatrix load_features(const std::string& path);

} // namespace bpae::unet
