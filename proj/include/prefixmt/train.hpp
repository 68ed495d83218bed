#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prefixmt/decode.hpp"
#include "prefixmt/model.hpp"
#include "prefixmt/optim.hpp"
#include "prefixmt/oracle.hpp"
#include "prefixmt/world.hpp"

namespace prefixmt {

enum class TrainMode {
    Standard,
    SingleStage,
    FinetuneOracleText,
    Reg,
    MultilingualCaption,
    TextOnlyBaseline,
};

const char* train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& s);

enum class CaptionLang { Auto, A, B, Both };

const char* caption_lang_name(CaptionLang c);
CaptionLang caption_lang_from_name(const std::string& s);

struct TrainConfig {
    int stage = 1;  // 1 or 2; ignored by SingleStage
    TrainMode mode = TrainMode::Standard;
    int epochs = 15;
    int batch_size = 32;
    float lr0 = 3e-4f;           // desk-scale default; the paper's 1e-5 targets
    float schedule_power = 1.0f;  // a 600M-parameter backbone
    float weight_decay = 0.01f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float clip_norm = 1.0f;
    uint64_t seed = 7;
    CaptionLang caption_lang = CaptionLang::Auto;
    int src_lang = 0;
    int tgt_lang = 1;
    bool early_stop = true;   // ceiling stop plus no-improvement patience
    int patience = 5;          // epochs without val-metric improvement
    float min_delta = 1e-4f;   // improvement threshold for the patience rule
    DecodeConfig val_decode;

    void validate() const;  // rejects invalid mode/stage combinations
};

struct TrainLogEntry {
    int stage = 0;
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_metric = 0.0;  // stage 1: token accuracy; stage 2: BLEU
};

// Full training state: enough to resume bit-exactly or to evaluate.
struct Checkpoint {
    static constexpr char kMagic[8] = "PFXMT01";  // 7 magic bytes on disk
    static constexpr uint8_t kVersion = 1;

    ModelConfig model_cfg;
    TrainConfig train_cfg;
    std::string config_echo;

    int stage = 0;
    TrainMode mode = TrainMode::Standard;
    int resolved_caption_lang = -1;

    int64_t epochs_done = 0;
    int64_t step = 0;         // optimizer invocations so far (schedule position)
    int64_t total_steps = 0;
    double best_metric = -1.0;
    int64_t best_epoch = -1;
    uint8_t done = 0;

    // frozen oracle (FT mode stores the updated text tables)
    uint64_t oracle_seed = 0;
    int d_c = 0, latent_dim = 0, words_per_lang = 0;
    float sigma_a = 0.0f, sigma_b = 0.0f;
    Tensor oracle_image_map, oracle_table_a, oracle_table_b;
    uint64_t oracle_image_hash = 0, oracle_text_hash = 0;

    struct ParamEntry {
        std::string name;
        char group = '?';
        Tensor tensor;
    };
    std::vector<ParamEntry> params;
    std::vector<ParamEntry> best_params;  // snapshot backing model selection

    struct OptEntry {
        std::string name;
        int64_t t = 0;
        std::vector<float> m, v;
    };
    std::vector<OptEntry> opt;
    int64_t opt_invocations = 0;

    std::array<uint64_t, 4> rng_state{};

    uint64_t param_group_hash(char g) const;
};

class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Oracle oracle_from_checkpoint(const Checkpoint& ckpt);
SeqModel model_from_checkpoint(const Checkpoint& ckpt, bool use_best_params);

// FT mode holds the image side only; everything else must match in full.
void verify_oracle_compatible(const Checkpoint& ckpt, const Oracle& world_oracle);

struct TrainOutput {
    Checkpoint checkpoint;
    std::vector<TrainLogEntry> log;
};

// Runs one stage (or the single-stage pipeline, or the text-only baseline)
// over the corpus. `resume` continues bit-exactly from a saved state;
// `stop_after_epochs` > 0 pauses early with done == 0 for later resumption.
TrainOutput train_stage(const Corpus& corpus, SeqModel& model, Oracle& oracle,
                        const TrainConfig& cfg, const Checkpoint* resume = nullptr,
                        int stop_after_epochs = -1, const std::string& config_echo = "");

// Convenience: Standard stage-1 then stage-2 pipeline.
TrainOutput train_standard_pipeline(const Corpus& corpus, SeqModel& model, Oracle& oracle,
                                    TrainConfig cfg, std::vector<TrainLogEntry>* full_log = nullptr);

}  // namespace prefixmt
