// Command-line front end for the bpae shared library. Orchestrates the
// two-stage pipeline: preprocess/synth -> train-ae -> features -> train-reg
// -> predict -> evaluate, plus the experiment harnesses.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <bpae.h>

namespace {

int exit_code(bpae_status st) {
    switch (st) {
        case BPAE_OK: return 0;
        case BPAE_ERR_INVALID_ARGUMENT: return 2;
        case BPAE_ERR_FORMAT: return 3;
        case BPAE_ERR_INCOMPATIBLE: return 4;
        case BPAE_ERR_NUMERIC: return 5;
        case BPAE_ERR_IO: return 6;
        case BPAE_ERR_INTERNAL: return 7;
    }
    return 7;
}

[[noreturn]] void fail(bpae_status st) {
    std::fprintf(stderr, "error: %s\n", bpae_last_error());
    std::exit(exit_code(st));
}

void check(bpae_status st) {
    if (st != BPAE_OK) fail(st);
}

struct ConfigHandle {
    bpae_config* ptr = nullptr;
    ConfigHandle() : ptr(bpae_config_create()) {}
    ~ConfigHandle() { bpae_config_free(ptr); }
    ConfigHandle(const ConfigHandle&) = delete;
    ConfigHandle& operator=(const ConfigHandle&) = delete;
};

struct Options {
    std::string config_path;
    std::vector<std::string> overrides; // key=value
    std::uint64_t seed = 42;
    int threads = 1;
    bool force = false;
    bool verbose = false;
};

void apply_config(const ConfigHandle& cfg, const Options& opt) {
    if (!opt.config_path.empty()) {
        check(bpae_config_load_file(cfg.ptr, opt.config_path.c_str()));
    } else if (const char* env = std::getenv("BPAE_CONFIG"); env && *env) {
        check(bpae_config_load_file(cfg.ptr, env));
    }
    for (const auto& kv : opt.overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
            std::exit(2);
        }
        check(bpae_config_set(cfg.ptr, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
}

void add_common(CLI::App* cmd, Options& opt) {
    cmd->add_option("--config", opt.config_path, "Config file (defaults to $BPAE_CONFIG)");
    cmd->add_option("--set", opt.overrides, "Config override key=value (repeatable)");
    cmd->add_option("--seed", opt.seed, "RNG seed");
    cmd->add_option("--threads", opt.threads, "Worker threads (1 = fully sequential)");
    cmd->add_flag("--force", opt.force, "Overwrite existing outputs");
    cmd->add_flag("-v,--verbose", opt.verbose, "Progress output on stderr");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bpae: blood pressure estimation from pulse waveforms"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(bpae_version()));

    Options opt;

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled segment store");
    std::uint32_t synth_n = 100;
    std::string out_store, out_labels;
    synth->add_option("--n", synth_n, "Number of instances")->required();
    synth->add_option("--out-store", out_store, "Output segment store")->required();
    synth->add_option("--out-labels", out_labels, "Output labels CSV")->required();
    add_common(synth, opt);

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "Ingest CSV waveforms and build a store");
    std::string in_path, report_path;
    prep->add_option("--in", in_path, "Input CSV file or directory")->required();
    prep->add_option("--out-store", out_store, "Output segment store")->required();
    prep->add_option("--out-labels", out_labels, "Output labels CSV")->required();
    prep->add_option("--report", report_path, "Screening report CSV")->required();
    add_common(prep, opt);

    // train-ae
    auto* tae = app.add_subcommand("train-ae", "Train the autoencoder feature extractor");
    std::string train_store, val_store, out_model, history_path;
    tae->add_option("--train", train_store, "Training segment store")->required();
    tae->add_option("--val", val_store, "Validation store (default: carve from training)");
    tae->add_option("--out-model", out_model, "Output model file")->required();
    tae->add_option("--history", history_path, "Training history CSV");
    add_common(tae, opt);

    // features
    auto* feat = app.add_subcommand("features", "Extract bottleneck features from a store");
    std::string model_path, store_path, out_features;
    feat->add_option("--model", model_path, "Trained model file")->required();
    feat->add_option("--store", store_path, "Segment store")->required();
    feat->add_option("--out", out_features, "Output feature matrix")->required();
    add_common(feat, opt);

    // train-reg
    auto* treg = app.add_subcommand("train-reg", "Fit a regressor on extracted features");
    std::string features_path, labels_path, target = "sbp", out_reg;
    treg->add_option("--features", features_path, "Feature matrix file")->required();
    treg->add_option("--labels", labels_path, "Labels CSV")->required();
    treg->add_option("--target", target, "sbp or dbp")->required();
    treg->add_option("--out", out_reg, "Output regressor file")->required();
    add_common(treg, opt);

    // predict
    auto* pred = app.add_subcommand("predict", "Predict BP values from features");
    std::string reg_sbp, reg_dbp, out_csv;
    pred->add_option("--reg-sbp", reg_sbp, "SBP regressor file");
    pred->add_option("--reg-dbp", reg_dbp, "DBP regressor file");
    pred->add_option("--features", features_path, "Feature matrix file")->required();
    pred->add_option("--out", out_csv, "Predictions CSV")->required();
    add_common(pred, opt);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Score predictions against labels");
    std::string predictions_path, report_json, plots_dir;
    ev->add_option("--predictions", predictions_path, "Predictions CSV")->required();
    ev->add_option("--labels", labels_path, "Labels CSV")->required();
    ev->add_option("--report", report_json, "Output report JSON")->required();
    ev->add_option("--plots", plots_dir, "Directory for plot-data CSVs");
    add_common(ev, opt);

    // stats
    auto* stats = app.add_subcommand("stats", "Dataset label statistics (SBP/DBP/MAP)");
    std::string stats_out;
    stats->add_option("--labels", labels_path, "Labels CSV")->required();
    stats->add_option("--out", stats_out, "Output JSON (default: stdout)");
    add_common(stats, opt);

    // experiment
    auto* exp = app.add_subcommand("experiment", "Run a holdout/kfold/cross-dataset experiment");
    std::string mode, store_b, labels_b, out_dir;
    std::vector<std::string> grid;
    exp->add_option("--mode", mode, "holdout | kfold | cross_dataset")->required();
    exp->add_option("--store", store_path, "Segment store")->required();
    exp->add_option("--labels", labels_path, "Labels CSV")->required();
    exp->add_option("--store-b", store_b, "Second store (cross_dataset test set)");
    exp->add_option("--labels-b", labels_b, "Second labels CSV");
    exp->add_option("--out", out_dir, "Output directory")->required();
    exp->add_option("--grid", grid, "Sweep: config key=v1,v2,... (repeatable, cartesian)");
    add_common(exp, opt);

    CLI11_PARSE(app, argc, argv);

    ConfigHandle cfg;
    apply_config(cfg, opt);

    if (synth->parsed()) {
        check(bpae_cmd_synth(cfg.ptr, synth_n, opt.seed, out_store.c_str(), out_labels.c_str(),
                             opt.force));
        std::printf("wrote %s and %s\n", out_store.c_str(), out_labels.c_str());
        return 0;
    }
    if (prep->parsed()) {
        check(bpae_cmd_preprocess(cfg.ptr, in_path.c_str(), out_store.c_str(),
                                  out_labels.c_str(), report_path.c_str(), opt.threads,
                                  opt.force));
        std::printf("wrote %s, %s, %s\n", out_store.c_str(), out_labels.c_str(),
                    report_path.c_str());
        return 0;
    }
    if (tae->parsed()) {
        check(bpae_cmd_train_ae(cfg.ptr, train_store.c_str(),
                                val_store.empty() ? nullptr : val_store.c_str(), opt.seed,
                                opt.threads, opt.verbose,
                                out_model.c_str(),
                                history_path.empty() ? nullptr : history_path.c_str(),
                                opt.force));
        std::printf("wrote %s\n", out_model.c_str());
        return 0;
    }
    if (feat->parsed()) {
        check(bpae_cmd_features(model_path.c_str(), store_path.c_str(), opt.threads,
                                out_features.c_str(), opt.force));
        std::printf("wrote %s\n", out_features.c_str());
        return 0;
    }
    if (treg->parsed()) {
        check(bpae_cmd_train_reg(cfg.ptr, features_path.c_str(), labels_path.c_str(),
                                 target.c_str(), opt.seed, out_reg.c_str(), opt.force));
        std::printf("wrote %s\n", out_reg.c_str());
        return 0;
    }
    if (pred->parsed()) {
        check(bpae_cmd_predict(reg_sbp.empty() ? nullptr : reg_sbp.c_str(),
                               reg_dbp.empty() ? nullptr : reg_dbp.c_str(),
                               features_path.c_str(), out_csv.c_str(), opt.force));
        std::printf("wrote %s\n", out_csv.c_str());
        return 0;
    }
    if (ev->parsed()) {
        check(bpae_cmd_evaluate(cfg.ptr, predictions_path.c_str(), labels_path.c_str(),
                                report_json.c_str(), plots_dir.empty() ? nullptr : plots_dir.c_str(),
                                opt.force));
        std::printf("wrote %s\n", report_json.c_str());
        return 0;
    }
    if (stats->parsed()) {
        check(bpae_cmd_stats(labels_path.c_str(), stats_out.empty() ? nullptr : stats_out.c_str()));
        return 0;
    }
    if (exp->parsed()) {
        if (grid.empty()) {
            check(bpae_cmd_experiment(cfg.ptr, mode.c_str(), store_path.c_str(),
                                      labels_path.c_str(),
                                      store_b.empty() ? nullptr : store_b.c_str(),
                                      labels_b.empty() ? nullptr : labels_b.c_str(), opt.seed,
                                      opt.threads, opt.verbose, out_dir.c_str(), opt.force));
            std::printf("wrote %s/summary.json\n", out_dir.c_str());
            return 0;
        }

        // Cartesian sweep over the listed config values.
        std::vector<std::string> keys;
        std::vector<std::vector<std::string>> values;
        for (const auto& g : grid) {
            const std::size_t eq = g.find('=');
            if (eq == std::string::npos) {
                std::fprintf(stderr, "error: --grid expects key=v1,v2,..., got '%s'\n", g.c_str());
                return 2;
            }
            keys.push_back(g.substr(0, eq));
            values.push_back(split_list(g.substr(eq + 1)));
            if (values.back().empty()) {
                std::fprintf(stderr, "error: --grid %s has no values\n", keys.back().c_str());
                return 2;
            }
        }

        std::string summary_csv = "combo";
        summary_csv += ",sbp_mae,dbp_mae\n";
        std::vector<std::size_t> idx(keys.size(), 0);
        for (;;) {
            std::string combo;
            for (std::size_t i = 0; i < keys.size(); ++i) {
                check(bpae_config_set(cfg.ptr, keys[i].c_str(), values[i][idx[i]].c_str()));
                std::string key_slug = keys[i];
                for (char& c : key_slug)
                    if (c == '.') c = '_';
                if (!combo.empty()) combo += "_";
                combo += key_slug + "-" + values[i][idx[i]];
            }
            const std::string dir = out_dir + "/" + combo;
            std::fprintf(stderr, "[grid] %s\n", combo.c_str());
            check(bpae_cmd_experiment(cfg.ptr, mode.c_str(), store_path.c_str(),
                                      labels_path.c_str(),
                                      store_b.empty() ? nullptr : store_b.c_str(),
                                      labels_b.empty() ? nullptr : labels_b.c_str(), opt.seed,
                                      opt.threads, opt.verbose, dir.c_str(), opt.force));

            std::ifstream in(dir + "/summary.json");
            nlohmann::json summary;
            in >> summary;
            const auto mae_of = [&](const char* tgt) -> std::string {
                if (summary.contains(tgt) && summary[tgt].contains("mae"))
                    return std::to_string(summary[tgt]["mae"].get<double>());
                if (summary.contains("aggregate"))
                    return std::to_string(
                        summary["aggregate"][std::string(tgt) + "_mae_mean"].get<double>());
                return "";
            };
            summary_csv += combo + "," + mae_of("sbp") + "," + mae_of("dbp") + "\n";

            std::size_t d = 0;
            for (; d < idx.size(); ++d) {
                if (++idx[d] < values[d].size()) break;
                idx[d] = 0;
            }
            if (d == idx.size()) break;
        }
        std::ofstream out(out_dir + "/grid_summary.csv");
        out << summary_csv;
        std::printf("wrote %s/grid_summary.csv\n", out_dir.c_str());
        return 0;
    }
    return 2;
}
