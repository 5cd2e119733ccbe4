#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bpae/dataset.hpp"
#include "bpae/quality.hpp"
#include "bpae/regressor.hpp"
#include "bpae/signal.hpp"
#include "bpae/unet.hpp"

namespace bpae::config {

// Flat dotted-key configuration with INI-style file loading. Every key has a
// default; setting an unknown key is an error so typos surface early.
class Config {
public:
    Config();

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    bool has(const std::string& key) const;

    long get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // Parses `[section]` headers and `key = value` lines; '#' and ';' start comments.
    void load_file(const std::string& path);

    std::string dump() const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

// Typed views assembled from the flat config.
unet::UNetConfig unet_config(const Config& c);
unet::TrainSpec train_spec(const Config& c);
regress::FitSpec fit_spec(const Config& c, regress::Target target);
quality::ScreenConfig screen_config(const Config& c);
signal::BaselineConfig baseline_config(const Config& c);
signal::FilterSpec filter_spec(const Config& c);
dataset::IngestOptions ingest_options(const Config& c);
dataset::SynthOptions synth_options(const Config& c);

// ABP baseline handling: "preserve_level" removes drift but keeps the mean
// pressure, "full" subtracts the whole estimate, "off" skips correction.
enum class AbpBaselineMode { PreserveLevel, Full, Off };
AbpBaselineMode abp_baseline_mode(const Config& c);

} // namespace bpae::config
