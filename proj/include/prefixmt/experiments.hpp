#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prefixmt/train.hpp"

namespace prefixmt {

// Line-oriented key=value report with a stable field order. Timing lines go
// in as comments so reruns stay byte-comparable on the data itself.
struct EvalReport {
    std::vector<std::pair<std::string, std::string>> entries;

    void add(const std::string& key, const std::string& value);
    void add(const std::string& key, double value);
    void add(const std::string& key, int64_t value);
    void comment(const std::string& text);
    const std::string* find(const std::string& key) const;

    std::string text() const;
    void write(const std::string& path) const;
    static EvalReport parse_file(const std::string& path);
};

struct ExperimentConfig {
    WorldConfig world;
    ModelConfig model;
    TrainConfig train;
    DecodeConfig decode;
    uint64_t seed = 7;
    std::string config_echo;
};

// Corpus with the source-language captions noised record by record;
// everything else (targets, grounded annotations) stays intact.
Corpus apply_source_noise(const Corpus& corpus, int src_lang, double p, NoiseMode mode,
                          uint64_t seed);

// Replaces the source tokens at every grounded position with MASK.
Corpus mask_grounded_sources(const Corpus& corpus, int src_lang);

// Fig. 4(a,b): per drop rate, train the image-grounded system and the
// text-only baseline on the noised world and report test BLEU side by side.
EvalReport run_noising_experiment(const Corpus& corpus, const std::vector<double>& p_grid,
                                  const ExperimentConfig& cfg);

// Fig. 4(c): full two-stage pipeline per prefix length.
EvalReport run_prefix_sweep(const Corpus& corpus, const std::vector<int>& k_grid,
                            const ExperimentConfig& cfg);

struct RecoveryScore {
    double accuracy = 0.0;
    long recovered = 0;
    long total = 0;
    // per attribute class: object, color, action
    double class_accuracy[3] = {0.0, 0.0, 0.0};
};

// Fig. 6: mask the grounded source tokens at test time and count how often
// the correct target-side token still shows up in the decode.
EvalReport run_masked_recovery(const Corpus& corpus, const ExperimentConfig& cfg);

// shared by the recovery driver and its tests
RecoveryScore score_recovery(const Corpus& corpus, Split split, int src_lang, int tgt_lang,
                             const std::vector<std::vector<int>>& hypotheses);

}  // namespace prefixmt
