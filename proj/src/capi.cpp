#include "bpae.h"

#include <cstring>
#include <string>

#include "bpae/config.hpp"
#include "bpae/dataset.hpp"
#include "bpae/pipeline.hpp"
#include "bpae/regressor.hpp"
#include "bpae/unet.hpp"

struct bpae_config {
    bpae::config::Config cfg;
};
struct bpae_store {
    bpae::dataset::SegmentStore store;
};
struct bpae_model {
    bpae::unet::UNetModel model;
};
struct bpae_regressor {
    bpae::regress::RegressorModel reg;
};

namespace {

thread_local std::string g_last_error;

bpae_status status_of(bpae::ErrorKind kind) {
    using bpae::ErrorKind;
    switch (kind) {
        case ErrorKind::InvalidArgument: return BPAE_ERR_INVALID_ARGUMENT;
        case ErrorKind::Format: return BPAE_ERR_FORMAT;
        case ErrorKind::Incompatible: return BPAE_ERR_INCOMPATIBLE;
        case ErrorKind::Numeric: return BPAE_ERR_NUMERIC;
        case ErrorKind::Io: return BPAE_ERR_IO;
        case ErrorKind::Internal: return BPAE_ERR_INTERNAL;
    }
    return BPAE_ERR_INTERNAL;
}

template <typename Fn>
bpae_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return BPAE_OK;
    } catch (const bpae::Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return BPAE_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return BPAE_ERR_INTERNAL;
    }
}

bpae_status invalid(const char* msg) {
    g_last_error = msg;
    return BPAE_ERR_INVALID_ARGUMENT;
}

std::string str_or_empty(const char* s) { return s ? std::string(s) : std::string(); }

} // namespace

extern "C" {

const char* bpae_version(void) { return "1.0.0"; }

const char* bpae_last_error(void) { return g_last_error.c_str(); }

bpae_config* bpae_config_create(void) { return new bpae_config(); }

void bpae_config_free(bpae_config* cfg) { delete cfg; }

bpae_status bpae_config_load_file(bpae_config* cfg, const char* path) {
    if (!cfg || !path) return invalid("config/path must not be null");
    return guarded([&] { cfg->cfg.load_file(path); });
}

bpae_status bpae_config_set(bpae_config* cfg, const char* key, const char* value) {
    if (!cfg || !key || !value) return invalid("config/key/value must not be null");
    return guarded([&] { cfg->cfg.set(key, value); });
}

bpae_status bpae_config_get(const bpae_config* cfg, const char* key, char* buf, size_t bufsize) {
    if (!cfg || !key || !buf || bufsize == 0) return invalid("bad config_get arguments");
    return guarded([&] {
        const std::string& v = cfg->cfg.get(key);
        if (v.size() + 1 > bufsize)
            throw bpae::InvalidArgument("buffer too small for value of " + std::string(key));
        std::memcpy(buf, v.c_str(), v.size() + 1);
    });
}

bpae_status bpae_store_open(const char* path, bpae_store** out) {
    if (!path || !out) return invalid("path/out must not be null");
    *out = nullptr;
    return guarded([&] { *out = new bpae_store{bpae::dataset::read_store(path)}; });
}

void bpae_store_free(bpae_store* store) { delete store; }

uint32_t bpae_store_segments(const bpae_store* store) {
    return store ? store->store.segment_count() : 0;
}

uint32_t bpae_store_segment_length(const bpae_store* store) {
    return store ? store->store.segment_length : 0;
}

uint32_t bpae_store_channels(const bpae_store* store) {
    return store ? static_cast<uint32_t>(store->store.channels.size()) : 0;
}

bpae_status bpae_store_channel_code(const bpae_store* store, uint32_t index, uint8_t* out) {
    if (!store || !out) return invalid("store/out must not be null");
    if (index >= store->store.channels.size()) return invalid("channel index out of range");
    *out = static_cast<uint8_t>(store->store.channels[index]);
    g_last_error.clear();
    return BPAE_OK;
}

bpae_status bpae_store_segment_id(const bpae_store* store, uint32_t index, uint64_t* out) {
    if (!store || !out) return invalid("store/out must not be null");
    if (index >= store->store.ids.size()) return invalid("segment index out of range");
    *out = store->store.ids[index];
    g_last_error.clear();
    return BPAE_OK;
}

bpae_status bpae_store_copy_row(const bpae_store* store, uint32_t segment, uint8_t channel_code,
                                float* out, size_t capacity) {
    if (!store || !out) return invalid("store/out must not be null");
    return guarded([&] {
        const auto& s = store->store;
        if (segment >= s.segment_count())
            throw bpae::InvalidArgument("segment index out of range");
        if (capacity < s.segment_length)
            throw bpae::InvalidArgument("output capacity below segment length");
        const std::size_t ci =
            s.channel_index(static_cast<bpae::signal::Channel>(channel_code));
        std::memcpy(out, s.row(segment, ci), s.segment_length * sizeof(float));
    });
}

bpae_status bpae_model_open(const char* path, bpae_model** out) {
    if (!path || !out) return invalid("path/out must not be null");
    *out = nullptr;
    return guarded([&] { *out = new bpae_model{bpae::unet::load_model(path)}; });
}

void bpae_model_free(bpae_model* model) { delete model; }

uint32_t bpae_model_features(const bpae_model* model) {
    return model ? model->model.cfg.n_features : 0;
}

uint32_t bpae_model_segment_length(const bpae_model* model) {
    return model ? model->model.cfg.segment_length : 0;
}

uint32_t bpae_model_input_channels(const bpae_model* model) {
    return model ? static_cast<uint32_t>(model->model.cfg.in_channels.size()) : 0;
}

bpae_status bpae_model_param_counts(const bpae_model* model, uint64_t* conv_params,
                                    uint64_t* dense_params, uint64_t* total) {
    if (!model) return invalid("model must not be null");
    return guarded([&] {
        const auto pc = bpae::unet::param_count(model->model.cfg);
        if (conv_params) *conv_params = pc.conv_params;
        if (dense_params) *dense_params = pc.dense_params;
        if (total) *total = pc.total;
    });
}

bpae_status bpae_model_forward(const bpae_model* model, const float* input, size_t input_len,
                               float* recon, float* features) {
    if (!model || !input) return invalid("model/input must not be null");
    return guarded([&] {
        const auto& cfg = model->model.cfg;
        const std::size_t want = cfg.in_channels.size() * cfg.segment_length;
        if (input_len != want)
            throw bpae::InvalidArgument("input length must be " + std::to_string(want));
        std::vector<double> x(input, input + input_len);
        const auto r = bpae::unet::forward(model->model, x.data(), 1, 1);
        if (recon)
            for (std::size_t i = 0; i < cfg.segment_length; ++i)
                recon[i] = static_cast<float>(r.recon[i]);
        if (features)
            for (std::size_t i = 0; i < cfg.n_features; ++i)
                features[i] = static_cast<float>(r.features[i]);
    });
}

bpae_status bpae_regressor_open(const char* path, bpae_regressor** out) {
    if (!path || !out) return invalid("path/out must not be null");
    *out = nullptr;
    return guarded([&] { *out = new bpae_regressor{bpae::regress::load_regressor(path)}; });
}

void bpae_regressor_free(bpae_regressor* reg) { delete reg; }

uint32_t bpae_regressor_features(const bpae_regressor* reg) {
    return reg ? static_cast<uint32_t>(reg->reg.n_features) : 0;
}

int bpae_regressor_target(const bpae_regressor* reg) {
    return reg ? static_cast<int>(reg->reg.target) : -1;
}

bpae_status bpae_regressor_predict_one(const bpae_regressor* reg, const float* features, size_t n,
                                       double* out_mmhg) {
    if (!reg || !features || !out_mmhg) return invalid("reg/features/out must not be null");
    return guarded([&] {
        std::vector<double> x(features, features + n);
        const auto preds = bpae::regress::predict(reg->reg, x.data(), 1, n);
        *out_mmhg = preds[0];
    });
}

bpae_status bpae_cmd_synth(const bpae_config* cfg, uint32_t n, uint64_t seed,
                           const char* out_store, const char* out_labels, int force) {
    if (!cfg || !out_store || !out_labels) return invalid("cfg/out paths must not be null");
    return guarded(
        [&] { bpae::pipeline::cmd_synth(cfg->cfg, n, seed, out_store, out_labels, force != 0); });
}

bpae_status bpae_cmd_preprocess(const bpae_config* cfg, const char* input_path,
                                const char* out_store, const char* out_labels,
                                const char* out_report, int threads, int force) {
    if (!cfg || !input_path || !out_store || !out_labels || !out_report)
        return invalid("cfg/paths must not be null");
    return guarded([&] {
        bpae::pipeline::cmd_preprocess(cfg->cfg, input_path, out_store, out_labels, out_report,
                                       threads, force != 0);
    });
}

bpae_status bpae_cmd_train_ae(const bpae_config* cfg, const char* train_store,
                              const char* val_store, uint64_t seed, int threads, int verbose,
                              const char* out_model, const char* out_history, int force) {
    if (!cfg || !train_store || !out_model) return invalid("cfg/paths must not be null");
    return guarded([&] {
        bpae::pipeline::cmd_train_ae(cfg->cfg, train_store, str_or_empty(val_store), seed, threads,
                                     verbose != 0, out_model, str_or_empty(out_history),
                                     force != 0);
    });
}

bpae_status bpae_cmd_features(const char* model_path, const char* store_path, int threads,
                              const char* out_features, int force) {
    if (!model_path || !store_path || !out_features) return invalid("paths must not be null");
    return guarded([&] {
        bpae::pipeline::cmd_features(model_path, store_path, threads, out_features, force != 0);
    });
}

bpae_status bpae_cmd_train_reg(const bpae_config* cfg, const char* features_path,
                               const char* labels_path, const char* target, uint64_t seed,
                               const char* out_regressor, int force) {
    if (!cfg || !features_path || !labels_path || !target || !out_regressor)
        return invalid("cfg/paths must not be null");
    return guarded([&] {
        bpae::pipeline::cmd_train_reg(cfg->cfg, features_path, labels_path, target, seed,
                                      out_regressor, force != 0);
    });
}

bpae_status bpae_cmd_predict(const char* reg_sbp, const char* reg_dbp, const char* features_path,
                             const char* out_csv, int force) {
    if (!features_path || !out_csv) return invalid("paths must not be null");
    return guarded([&] {
        bpae::pipeline::cmd_predict(str_or_empty(reg_sbp), str_or_empty(reg_dbp), features_path,
                                    out_csv, force != 0);
    });
}

bpae_status bpae_cmd_evaluate(const bpae_config* cfg, const char* predictions_csv,
                              const char* labels_csv, const char* out_report_json,
                              const char* plots_dir, int force) {
    if (!cfg || !predictions_csv || !labels_csv || !out_report_json)
        return invalid("cfg/paths must not be null");
    return guarded([&] {
        bpae::pipeline::cmd_evaluate(cfg->cfg, predictions_csv, labels_csv, out_report_json,
                                     str_or_empty(plots_dir), force != 0);
    });
}

bpae_status bpae_cmd_stats(const char* labels_csv, const char* out_json) {
    if (!labels_csv) return invalid("labels path must not be null");
    return guarded([&] { bpae::pipeline::cmd_stats(labels_csv, str_or_empty(out_json)); });
}

bpae_status bpae_cmd_experiment(const bpae_config* cfg, const char* mode, const char* store_path,
                                const char* labels_path, const char* store_b,
                                const char* labels_b, uint64_t seed, int threads, int verbose,
                                const char* out_dir, int force) {
    if (!cfg || !mode || !store_path || !labels_path || !out_dir)
        return invalid("cfg/paths must not be null");
    return guarded([&] {
        bpae::pipeline::cmd_experiment(cfg->cfg, mode, store_path, labels_path,
                                       str_or_empty(store_b), str_or_empty(labels_b), seed,
                                       threads, verbose != 0, out_dir, force != 0);
    });
}

} // extern "C"
