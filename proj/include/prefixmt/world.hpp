#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefixmt/vocab.hpp"

namespace prefixmt {

class CorpusError : public std::runtime_error {
public:
    explicit CorpusError(const std::string& msg) : std::runtime_error(msg) {}
};

// One configuration block regenerates the vocabulary, the corpus and the
// oracle, so a config + seed fully pins the world.
struct WorldConfig {
    uint64_t seed = 7;
    int n_objects = 16;
    int n_colors = 12;
    int n_actions = 12;
    int n_dets = 4;
    int n_advs = 4;
    int n_concept_clusters = 512;
    int vocab_per_lang = 64;
    int n_train = 2000;
    int n_valid = 200;
    int n_test = 200;
    int latent_dim = 48;
    float latent_noise = 0.0f;
    int d_c = 64;          // oracle embedding dim
    float sigma_a = 0.1f;  // per-language text-side noise
    float sigma_b = 0.8f;

    int lexemes_needed() const { return n_objects + n_colors + n_actions + n_dets + n_advs; }
    int obj_lex(int i) const { return i; }
    int color_lex(int i) const { return n_objects + i; }
    int action_lex(int i) const { return n_objects + n_colors + i; }
    int det_lex(int i) const { return n_objects + n_colors + n_actions + i; }
    int adv_lex(int i) const { return n_objects + n_colors + n_actions + n_dets + i; }
    bool is_attribute_lexeme(int lex) const { return lex < n_objects + n_colors + n_actions; }
    // 0 = object, 1 = color, 2 = action, -1 otherwise
    int attribute_class(int lex) const;

    void validate() const;
};

enum class Split { Train, Valid, Test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct Triplet {
    int id = 0;
    Split split = Split::Train;
    std::vector<float> latent;    // v
    std::vector<int> caption_a;   // content tokens, language A ids
    std::vector<int> caption_b;   // lexicon-mapped, same positions
    std::vector<int> grounded;    // caption positions holding attribute tokens
};

struct Corpus {
    WorldConfig cfg;
    Vocabulary vocab;
    std::vector<Triplet> records;

    std::vector<const Triplet*> split(Split s) const;
    const std::vector<int>& caption(const Triplet& t, int lang) const {
        return lang == 0 ? t.caption_a : t.caption_b;
    }
};

// Latent-space vectors per lexeme; attribute lexemes carry mutually
// orthonormal unit vectors (so every grounded attribute is exactly
// recoverable from a record's latent), everything else is zero. Shared
// between world generation and the oracle's frozen text-side tables.
struct AttributeSpace {
    int latent_dim = 0;
    std::vector<std::vector<float>> lexeme_vectors;
    static AttributeSpace build(const WorldConfig& cfg);
};

Corpus generate_world(const WorldConfig& cfg);

enum class NoiseMode { Drop, Mask };

// Independent per-token Bernoulli(p) noising; special tokens are never
// touched. Deterministic given the seed.
std::vector<int> noise_tokens(std::span<const int> seq, double p, uint64_t seed,
                              NoiseMode mode, const Vocabulary& vocab);

void write_corpus(const Corpus& corpus, const std::string& path);
Corpus read_corpus(const std::string& path, const WorldConfig& cfg);

// sequence framing
std::vector<int> trivial_source();  // exactly {START_SENT, END_SENT}
std::vector<int> frame_sentence(std::span<const int> content, int lang, const Vocabulary& vocab);

enum class TaskKind { Caption, Translate };

struct Batch {
    TaskKind task = TaskKind::Translate;
    int caption_lang = 0;
    std::vector<const Triplet*> records;
};

// Deterministic per-epoch shuffle; every record appears exactly once.
std::vector<Batch> make_batches(const Corpus& corpus, Split split, int batch_size,
                                uint64_t seed, int epoch, TaskKind task, int caption_lang);

// PAD-aligned matrix view of ragged token rows.
std::vector<std::vector<int>> pad_sequences(const std::vector<std::vector<int>>& rows, int pad_id);

}  // namespace prefixmt
