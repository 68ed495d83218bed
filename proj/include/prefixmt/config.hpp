#pragma once

#include <map>
#include <string>
#include <vector>

#include "prefixmt/decode.hpp"
#include "prefixmt/model.hpp"
#include "prefixmt/train.hpp"
#include "prefixmt/world.hpp"

namespace prefixmt {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Fully resolved run configuration: one master seed plus the per-module
// blocks, parsed from an INI-style key=value file. CLI --set overrides beat
// the file; the PREFIXMT_SEED environment variable beats the file's seed but
// not an explicit CLI override.
struct RunConfig {
    uint64_t seed = 7;
    WorldConfig world;
    ModelConfig model;
    TrainConfig train;
    DecodeConfig decode;

    std::string data_path = "data/corpus.jsonl";
    std::string checkpoint_path = "checkpoints/run.ckpt";
    std::string report_path = "reports/run.report";

    // experiment section
    std::string experiment_kind = "noise";
    std::vector<double> p_grid{0.0, 0.15, 0.3};
    std::vector<int> k_grid{1, 5, 10, 20, 50};
    int sweep_seeds = 5;

    static RunConfig defaults();
    static RunConfig load(const std::string& path,
                          const std::vector<std::string>& overrides = {});
    // overrides without a file
    static RunConfig from_overrides(const std::vector<std::string>& overrides);

    std::string render() const;  // canonical echo, stable order
};

}  // namespace prefixmt
