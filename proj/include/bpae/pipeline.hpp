#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bpae/config.hpp"

namespace bpae::pipeline {

// Outputs are write-once: an existing path is an error unless force is set.
void ensure_writable(const std::string& path, bool force);

struct PreprocessSummary {
    std::size_t windows = 0;
    std::size_t accepted = 0;
};

// Full preprocessing chain: ingest, baseline correction, derivatives,
// normalization, label extraction, screening. Writes the accepted store, the
// labels CSV and a `segment_id,decision,reason` report.
PreprocessSummary cmd_preprocess(const config::Config& cfg, const std::string& input_path,
                                 const std::string& out_store, const std::string& out_labels,
                                 const std::string& out_report, int threads, bool force);

void cmd_synth(const config::Config& cfg, std::size_t n, std::uint64_t seed,
               const std::string& out_store, const std::string& out_labels, bool force);

void cmd_train_ae(const config::Config& cfg, const std::string& train_store_path,
                  const std::string& val_store_path, std::uint64_t seed, int threads, bool verbose,
                  const std::string& out_model, const std::string& out_history, bool force);

void cmd_features(const std::string& model_path, const std::string& store_path, int threads,
                  const std::string& out_features, bool force);

void cmd_train_reg(const config::Config& cfg, const std::string& features_path,
                   const std::string& labels_path, const std::string& target, std::uint64_t seed,
                   const std::string& out_regressor, bool force);

// Either regressor path may be empty; the predictions CSV gets one column per
// provided target: id[,sbp_pred][,dbp_pred].
void cmd_predict(const std::string& reg_sbp_path, const std::string& reg_dbp_path,
                 const std::string& features_path, const std::string& out_csv, bool force);

void cmd_evaluate(const config::Config& cfg, const std::string& predictions_csv,
                  const std::string& labels_csv, const std::string& out_report,
                  const std::string& plots_dir, bool force);

// Table-1-style summary (min/max/mean/std of SBP/DBP/MAP) as JSON; empty
// output path prints to stdout.
void cmd_stats(const std::string& labels_csv, const std::string& out_json);

// mode: holdout | kfold | cross_dataset. store_b/labels_b only for cross_dataset.
void cmd_experiment(const config::Config& cfg, const std::string& mode,
                    const std::string& store_path, const std::string& labels_path,
                    const std::string& store_b_path, const std::string& labels_b_path,
                    std::uint64_t seed, int threads, bool verbose, const std::string& out_dir,
                    bool force);

} // namespace bpae::pipeline
