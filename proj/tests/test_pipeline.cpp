#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bpae/binio.hpp"
#include "bpae/config.hpp"
#include "bpae/pipeline.hpp"
#include "bpae/rng.hpp"
#include "bpae/unet.hpp"

using namespace bpae;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "bpae_pipeline" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

// Raw multi-record CSV fixture: pulse-train PPG/ECG plus an ABP channel with
// slow drift, realistic enough to survive the full preprocessing chain.
void write_raw_csv(const std::string& path, std::size_t n_samples, double sbp, double dbp,
                   bool flat_abp = false, double period = 96.0) {
    std::ofstream f(path, std::ios::trunc);
    f << "ppg,ecg,abp\n";
    const double sigma = 0.06 * period;
    const double sigma_e = 0.015 * period;
    for (std::size_t i = 0; i < n_samples; ++i) {
        double ppg = 0.0, ecg = 0.0, abp_shape = 0.0;
        for (double c = 20.0; c < static_cast<double>(n_samples) + 6 * period; c += period) {
            const double cc = std::round(c);
            const double d = (static_cast<double>(i) - cc) / sigma;
            if (std::abs(d) < 8.0) {
                ppg += std::exp(-0.5 * d * d);
                abp_shape += std::exp(-0.5 * (d * sigma / (0.045 * period)) *
                                      (d * sigma / (0.045 * period)) / 2.0);
            }
            const double de = (static_cast<double>(i) - (cc - 0.15 * period)) / sigma_e;
            if (std::abs(de) < 8.0) ecg += std::exp(-0.5 * de * de);
        }
        const double drift = 0.25 * std::sin(2.0 * M_PI * 0.05 * static_cast<double>(i) / 125.0);
        const double abp = flat_abp ? 100.0 : dbp + (sbp - dbp) * std::min(1.0, abp_shape);
        f << (0.2 + ppg + drift) << "," << (0.1 + ecg + 0.5 * drift) << "," << abp << "\n";
    }
}

config::Config tiny_pipeline_config() {
    config::Config cfg;
    cfg.set("unet.width", "4");
    cfg.set("unet.features", "8");
    cfg.set("train.max_epochs", "3");
    cfg.set("train.patience", "3");
    cfg.set("train.batch_size", "16");
    cfg.set("mlp.hidden", "16");
    cfg.set("mlp.max_iter", "40");
    return cfg;
}

} // namespace

TEST_CASE("config defaults carry the reference hyperparameters") {
    const config::Config cfg;
    CHECK(cfg.get_int("unet.depth") == 1);
    CHECK(cfg.get_int("unet.width") == 128);
    CHECK(cfg.get_int("unet.kernel") == 3);
    CHECK(cfg.get_int("unet.features") == 1024);
    CHECK(cfg.get("unet.channels") == "ppg,vpg,apg,ecg");
    CHECK(cfg.get_int("train.batch_size") == 64);
    CHECK(cfg.get_int("train.max_epochs") == 100);
    CHECK(cfg.get_int("train.patience") == 15);
    CHECK(cfg.get_double("train.lr") == 0.001);
    CHECK(cfg.get_int("mlp.hidden") == 100);
    CHECK(cfg.get_double("mlp.alpha") == 0.0001);
    CHECK(cfg.get_int("mlp.max_iter") == 500);
    CHECK(cfg.get_double("screen.sbp_min") == 80.0);
    CHECK(cfg.get_double("screen.pp_max") == 120.0);
    CHECK(cfg.get_int("baseline.window") == 188);
    CHECK(cfg.get_double("filter.low_hz") == 0.5);
    CHECK(cfg.get_double("split.train_frac") == 0.75);
}

TEST_CASE("config file loading, overrides and validation") {
    const std::string dir = fresh_dir("config");
    const std::string path = dir + "/test.cfg";
    {
        std::ofstream f(path);
        f << "# comment\n[unet]\nwidth = 32\nfeatures=64\n\n[train]\nmax_epochs = 7 ; inline\n";
    }
    config::Config cfg;
    cfg.load_file(path);
    CHECK(cfg.get_int("unet.width") == 32);
    CHECK(cfg.get_int("unet.features") == 64);
    CHECK(cfg.get_int("train.max_epochs") == 7);

    CHECK_THROWS_AS(cfg.set("unet.nonsense", "1"), InvalidArgument);
    cfg.set("unet.depth", "zzz");
    CHECK_THROWS_AS(cfg.get_int("unet.depth"), InvalidArgument);

    // channel combinations are restricted to the four supported sets
    config::Config bad;
    bad.set("unet.channels", "vpg,apg");
    CHECK_THROWS_AS(config::unet_config(bad), InvalidArgument);
    bad.set("unet.channels", "ppg,vpg,apg,ecg");
    CHECK(config::unet_config(bad).in_channels.size() == 4);
}

TEST_CASE("cmd_preprocess on clean records accepts everything") {
    const std::string dir = fresh_dir("prep_clean");
    fs::create_directories(dir + "/in");
    write_raw_csv(dir + "/in/a.csv", 3 * 1024 + 500, 125.0, 75.0);
    write_raw_csv(dir + "/in/b.csv", 2 * 1024 + 300, 150.0, 90.0, false, 80.0);

    const config::Config cfg;
    const auto summary = pipeline::cmd_preprocess(cfg, dir + "/in", dir + "/store.bps",
                                                  dir + "/labels.csv", dir + "/report.csv", 1,
                                                  false);
    CHECK(summary.windows == 5);
    CHECK(summary.accepted == 5);

    const auto store = dataset::read_store(dir + "/store.bps");
    CHECK(store.segment_count() == 5);
    CHECK(store.channels.size() == 5);
    const auto labels = dataset::read_labels(dir + "/labels.csv");
    REQUIRE(labels.size() == 5);
    // record a: ~125/75, record b: ~150/90; subjects from file stems
    CHECK(labels[0].label.subject_id == "a");
    CHECK(labels[4].label.subject_id == "b");
    CHECK(std::abs(labels[0].label.sbp - 125.0) < 4.0);
    CHECK(std::abs(labels[0].label.dbp - 75.0) < 4.0);
    CHECK(std::abs(labels[4].label.sbp - 150.0) < 4.0);

    const std::string report = binio::slurp(dir + "/report.csv");
    CHECK(report.find("segment_id,decision,reason") == 0);
    CHECK(report.find("0,accept,") != std::string::npos);
}

TEST_CASE("cmd_preprocess reports a flat ABP window as blank") {
    const std::string dir = fresh_dir("prep_blank");
    fs::create_directories(dir + "/in");
    write_raw_csv(dir + "/in/rec.csv", 1024, 120.0, 70.0, /*flat_abp=*/true);

    const config::Config cfg;
    const auto summary = pipeline::cmd_preprocess(cfg, dir + "/in", dir + "/store.bps",
                                                  dir + "/labels.csv", dir + "/report.csv", 1,
                                                  false);
    CHECK(summary.windows == 1);
    CHECK(summary.accepted == 0);
    const std::string report = binio::slurp(dir + "/report.csv");
    CHECK(report.find("0,reject,blank") != std::string::npos);
}

TEST_CASE("cmd_preprocess is deterministic") {
    const std::string dir = fresh_dir("prep_det");
    fs::create_directories(dir + "/in");
    write_raw_csv(dir + "/in/rec.csv", 2 * 1024 + 200, 130.0, 80.0);

    const config::Config cfg;
    pipeline::cmd_preprocess(cfg, dir + "/in", dir + "/s1.bps", dir + "/l1.csv", dir + "/r1.csv",
                             1, false);
    pipeline::cmd_preprocess(cfg, dir + "/in", dir + "/s2.bps", dir + "/l2.csv", dir + "/r2.csv",
                             1, false);
    CHECK(binio::slurp(dir + "/s1.bps") == binio::slurp(dir + "/s2.bps"));
    CHECK(binio::slurp(dir + "/l1.csv") == binio::slurp(dir + "/l2.csv"));
    CHECK(binio::slurp(dir + "/r1.csv") == binio::slurp(dir + "/r2.csv"));
}

TEST_CASE("staged flow: synth, train, features, regress, predict, evaluate") {
    const std::string dir = fresh_dir("staged");
    const config::Config cfg = tiny_pipeline_config();

    pipeline::cmd_synth(cfg, 48, 5, dir + "/store.bps", dir + "/labels.csv", false);
    pipeline::cmd_train_ae(cfg, dir + "/store.bps", "", 5, 1, false, dir + "/model.bpun",
                           dir + "/history.csv", false);
    pipeline::cmd_features(dir + "/model.bpun", dir + "/store.bps", 1, dir + "/features.bpfm",
                           false);
    pipeline::cmd_train_reg(cfg, dir + "/features.bpfm", dir + "/labels.csv", "sbp", 5,
                            dir + "/reg_sbp.bprg", false);
    pipeline::cmd_train_reg(cfg, dir + "/features.bpfm", dir + "/labels.csv", "dbp", 5,
                            dir + "/reg_dbp.bprg", false);
    pipeline::cmd_predict(dir + "/reg_sbp.bprg", dir + "/reg_dbp.bprg", dir + "/features.bpfm",
                          dir + "/pred.csv", false);
    pipeline::cmd_evaluate(cfg, dir + "/pred.csv", dir + "/labels.csv", dir + "/report.json",
                           dir + "/plots", false);

    // history CSV has the documented header
    const std::string hist = binio::slurp(dir + "/history.csv");
    CHECK(hist.rfind("epoch,train_mse,val_mae\n", 0) == 0);

    // evaluation artifacts exist and carry both targets
    const std::string report = binio::slurp(dir + "/report.json");
    CHECK(report.find("\"sbp\"") != std::string::npos);
    CHECK(report.find("\"dbp\"") != std::string::npos);
    CHECK(fs::exists(dir + "/plots/sbp/regression_points.csv"));
    CHECK(fs::exists(dir + "/plots/sbp/bland_altman.csv"));
    CHECK(fs::exists(dir + "/plots/sbp/error_hist.csv"));
    CHECK(fs::exists(dir + "/plots/dbp/regression_points.csv"));

    // write-once: repeating a stage without force fails, with force passes
    CHECK_THROWS_AS(pipeline::cmd_features(dir + "/model.bpun", dir + "/store.bps", 1,
                                           dir + "/features.bpfm", false),
                    IoError);
    pipeline::cmd_features(dir + "/model.bpun", dir + "/store.bps", 1, dir + "/features.bpfm",
                           true);
}

TEST_CASE("predict rejects mismatched feature width before compute") {
    const std::string dir = fresh_dir("mismatch");
    const config::Config cfg = tiny_pipeline_config();
    pipeline::cmd_synth(cfg, 24, 9, dir + "/store.bps", dir + "/labels.csv", false);
    pipeline::cmd_train_ae(cfg, dir + "/store.bps", "", 9, 1, false, dir + "/model8.bpun", "",
                           false);
    pipeline::cmd_features(dir + "/model8.bpun", dir + "/store.bps", 1, dir + "/f8.bpfm", false);
    pipeline::cmd_train_reg(cfg, dir + "/f8.bpfm", dir + "/labels.csv", "sbp", 9,
                            dir + "/reg8.bprg", false);

    // second model with a different feature width
    config::Config cfg16 = tiny_pipeline_config();
    cfg16.set("unet.features", "16");
    pipeline::cmd_train_ae(cfg16, dir + "/store.bps", "", 9, 1, false, dir + "/model16.bpun", "",
                           false);
    pipeline::cmd_features(dir + "/model16.bpun", dir + "/store.bps", 1, dir + "/f16.bpfm", false);

    CHECK_THROWS_AS(
        pipeline::cmd_predict(dir + "/reg8.bprg", "", dir + "/f16.bpfm", dir + "/p.csv", false),
        IncompatibleError);

    // wrong-target regressor is rejected too
    CHECK_THROWS_AS(
        pipeline::cmd_predict("", dir + "/reg8.bprg", dir + "/f8.bpfm", dir + "/p.csv", false),
        IncompatibleError);
}

TEST_CASE("evaluate on predictions equal to labels: zero error, grade A, AAMI pass") {
    const std::string dir = fresh_dir("eval_identity");
    const config::Config cfg;
    pipeline::cmd_synth(cfg, 400, 3, dir + "/store.bps", dir + "/labels.csv", false);
    const auto labels = dataset::read_labels(dir + "/labels.csv");

    std::string pred = "id,sbp_pred,dbp_pred\n";
    char buf[96];
    for (const auto& row : labels) {
        std::snprintf(buf, sizeof buf, "%llu,%.10g,%.10g\n",
                      static_cast<unsigned long long>(row.id), row.label.sbp, row.label.dbp);
        pred += buf;
    }
    binio::spill(dir + "/pred.csv", pred);

    pipeline::cmd_evaluate(cfg, dir + "/pred.csv", dir + "/labels.csv", dir + "/report.json", "",
                           false);
    const std::string report = binio::slurp(dir + "/report.json");
    CHECK(report.find("\"grade\": \"A\"") != std::string::npos);
    CHECK(report.find("\"pass\": true") != std::string::npos);
    // 400 segments in groups of 4: 100 subjects >= 85
    CHECK(report.find("\"n_subjects\": 100") != std::string::npos);
}

TEST_CASE("cmd_stats emits min/max/mean/std per quantity") {
    const std::string dir = fresh_dir("stats");
    const config::Config cfg;
    pipeline::cmd_synth(cfg, 32, 11, dir + "/store.bps", dir + "/labels.csv", false);
    pipeline::cmd_stats(dir + "/labels.csv", dir + "/stats.json");
    const std::string stats = binio::slurp(dir + "/stats.json");
    CHECK(stats.find("\"sbp\"") != std::string::npos);
    CHECK(stats.find("\"dbp\"") != std::string::npos);
    CHECK(stats.find("\"map\"") != std::string::npos);
    CHECK(stats.find("\"std\"") != std::string::npos);
}

TEST_CASE("experiment holdout writes a complete artifact tree") {
    const std::string dir = fresh_dir("exp_holdout");
    config::Config cfg = tiny_pipeline_config();
    cfg.set("split.train_frac", "0.75");
    cfg.set("split.val_frac", "0.2");

    pipeline::cmd_synth(cfg, 80, 13, dir + "/store.bps", dir + "/labels.csv", false);
    pipeline::cmd_experiment(cfg, "holdout", dir + "/store.bps", dir + "/labels.csv", "", "", 13,
                             1, false, dir + "/out", false);

    CHECK(fs::exists(dir + "/out/model.bpun"));
    CHECK(fs::exists(dir + "/out/history.csv"));
    CHECK(fs::exists(dir + "/out/features_train.bpfm"));
    CHECK(fs::exists(dir + "/out/features_test.bpfm"));
    CHECK(fs::exists(dir + "/out/reg_sbp.bprg"));
    CHECK(fs::exists(dir + "/out/reg_dbp.bprg"));
    CHECK(fs::exists(dir + "/out/predictions.csv"));
    CHECK(fs::exists(dir + "/out/report.json"));
    CHECK(fs::exists(dir + "/out/summary.json"));
    CHECK(fs::exists(dir + "/out/plots/sbp/regression_points.csv"));

    const std::string summary = binio::slurp(dir + "/out/summary.json");
    CHECK(summary.find("\"mode\": \"holdout\"") != std::string::npos);
    CHECK(summary.find("\"n_train\": 48") != std::string::npos); // 80*0.75*0.8
    CHECK(summary.find("\"n_val\": 12") != std::string::npos);
    CHECK(summary.find("\"n_test\": 20") != std::string::npos);
    CHECK(summary.find("baseline_mae") != std::string::npos);
}

TEST_CASE("experiment kfold aggregates per-fold reports") {
    const std::string dir = fresh_dir("exp_kfold");
    config::Config cfg = tiny_pipeline_config();
    cfg.set("split.folds", "3");
    cfg.set("train.max_epochs", "2");
    cfg.set("train.patience", "2");

    pipeline::cmd_synth(cfg, 45, 29, dir + "/store.bps", dir + "/labels.csv", false);
    pipeline::cmd_experiment(cfg, "kfold", dir + "/store.bps", dir + "/labels.csv", "", "", 29, 1,
                             false, dir + "/out", false);

    CHECK(fs::exists(dir + "/out/fold_0/report.json"));
    CHECK(fs::exists(dir + "/out/fold_1/report.json"));
    CHECK(fs::exists(dir + "/out/fold_2/report.json"));
    const std::string summary = binio::slurp(dir + "/out/summary.json");
    CHECK(summary.find("\"aggregate\"") != std::string::npos);
    CHECK(summary.find("sbp_mae_mean") != std::string::npos);
    CHECK(summary.find("dbp_mae_std") != std::string::npos);
}

TEST_CASE("experiment cross_dataset trains on A and tests on B") {
    const std::string dir = fresh_dir("exp_cross");
    config::Config cfg = tiny_pipeline_config();
    cfg.set("train.max_epochs", "2");
    cfg.set("train.patience", "2");

    pipeline::cmd_synth(cfg, 40, 31, dir + "/a.bps", dir + "/a.csv", false);
    pipeline::cmd_synth(cfg, 16, 32, dir + "/b.bps", dir + "/b.csv", false);
    pipeline::cmd_experiment(cfg, "cross_dataset", dir + "/a.bps", dir + "/a.csv", dir + "/b.bps",
                             dir + "/b.csv", 31, 1, false, dir + "/out", false);
    const std::string summary = binio::slurp(dir + "/out/summary.json");
    CHECK(summary.find("\"n_test\": 16") != std::string::npos);

    CHECK_THROWS_AS(pipeline::cmd_experiment(cfg, "cross_dataset", dir + "/a.bps", dir + "/a.csv",
                                             "", "", 1, 1, false, dir + "/out2", false),
                    InvalidArgument);
    CHECK_THROWS_AS(pipeline::cmd_experiment(cfg, "bogus", dir + "/a.bps", dir + "/a.csv", "", "",
                                             1, 1, false, dir + "/out3", false),
                    InvalidArgument);
}

TEST_CASE("full staged flow is bit-identical across reruns with one seed") {
    const config::Config cfg = tiny_pipeline_config();
    std::vector<std::string> dirs = {fresh_dir("det_a"), fresh_dir("det_b")};
    for (const auto& dir : dirs) {
        pipeline::cmd_synth(cfg, 32, 17, dir + "/store.bps", dir + "/labels.csv", false);
        pipeline::cmd_train_ae(cfg, dir + "/store.bps", "", 17, 1, false, dir + "/model.bpun",
                               dir + "/history.csv", false);
        pipeline::cmd_features(dir + "/model.bpun", dir + "/store.bps", 1, dir + "/f.bpfm", false);
        pipeline::cmd_train_reg(cfg, dir + "/f.bpfm", dir + "/labels.csv", "sbp", 17,
                                dir + "/reg.bprg", false);
        pipeline::cmd_predict(dir + "/reg.bprg", "", dir + "/f.bpfm", dir + "/pred.csv", false);
        pipeline::cmd_evaluate(cfg, dir + "/pred.csv", dir + "/labels.csv", dir + "/report.json",
                               "", false);
    }
    for (const std::string name :
         {"store.bps", "model.bpun", "f.bpfm", "reg.bprg", "pred.csv", "report.json",
          "history.csv"}) {
        CHECK(binio::slurp(dirs[0] + "/" + name) == binio::slurp(dirs[1] + "/" + name));
    }
}

TEST_CASE("ppg-target ablation trains and extracts features") {
    const std::string dir = fresh_dir("ppg_target");
    config::Config cfg = tiny_pipeline_config();
    cfg.set("unet.target", "ppg");
    cfg.set("unet.channels", "ppg,ecg");

    pipeline::cmd_synth(cfg, 24, 23, dir + "/store.bps", dir + "/labels.csv", false);
    pipeline::cmd_train_ae(cfg, dir + "/store.bps", "", 23, 1, false, dir + "/model.bpun", "",
                           false);
    const unet::UNetModel m = unet::load_model(dir + "/model.bpun");
    CHECK(m.cfg.target == signal::Channel::PPG);
    CHECK(m.cfg.in_channels.size() == 2);
    // PPG targets are already in [0,1]; the stored normalization is identity
    CHECK(m.abp_gmin == 0.0);
    CHECK(m.abp_gmax == 1.0);
    pipeline::cmd_features(dir + "/model.bpun", dir + "/store.bps", 1, dir + "/f.bpfm", false);
    CHECK(unet::load_features(dir + "/f.bpfm").rows == 24);
}
