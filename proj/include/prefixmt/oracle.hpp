#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "prefixmt/tensor.hpp"
#include "prefixmt/world.hpp"

namespace prefixmt {

enum class EmbeddingSource { Image, Text };

struct OracleEmbedding {
    Tensor h;  // unit norm, length d_c
    EmbeddingSource source = EmbeddingSource::Image;
    int lang = -1;  // for Text
};

// Frozen stand-in for the pre-aligned multimodal encoder pair. Alignment is
// built in rather than trained: the image map has orthonormal columns (so it
// preserves cosines), and the text side reconstructs the same latent concept
// from a caption's attribute tokens, perturbed by a per-language pseudo-noise
// of strength sigma. Every draw is keyed on the construction seed, so the
// whole object is a pure function of its config.
class Oracle {
public:
    static Oracle build(const WorldConfig& cfg);
    // reconstruction from checkpointed parts
    static Oracle restore(uint64_t seed, int d_c, int latent_dim, int words_per_lang,
                          float sigma_a, float sigma_b, Tensor image_map,
                          Tensor table_a, Tensor table_b);

    int d_c() const { return d_c_; }
    int latent_dim() const { return latent_dim_; }
    float sigma(int lang) const { return lang == 0 ? sigma_a_ : sigma_b_; }
    uint64_t seed() const { return seed_; }
    int words_per_lang() const { return words_per_lang_; }

    OracleEmbedding encode_image(std::span<const float> v) const;
    // Accepts the language's own word ids plus specials (which contribute
    // nothing); any other id is an unknown token.
    OracleEmbedding encode_text(std::span<const int> tokens, int lang) const;

    double alignment_score(const Corpus& corpus, int lang) const;
    // argmax of alignment_score over {src, tgt}; near-ties go to the source
    int select_caption_language(const Corpus& corpus, int src_lang, int tgt_lang) const;

    uint64_t image_hash() const;
    uint64_t text_hash() const;
    uint64_t full_hash() const;

    // FT mode: only the text-side tables ever unfreeze
    void set_text_trainable(bool on);
    std::vector<Tensor> text_parameters() const { return {table_a_, table_b_}; }

    const Tensor& image_map() const { return image_map_; }
    const Tensor& text_table(int lang) const { return lang == 0 ? table_a_ : table_b_; }

    int64_t image_calls() const { return counters_->image.load(); }
    int64_t text_calls() const { return counters_->text.load(); }
    void reset_counters() const {
        counters_->image.store(0);
        counters_->text.store(0);
    }

private:
    Oracle() = default;

    struct Counters {
        std::atomic<int64_t> image{0};
        std::atomic<int64_t> text{0};
    };

    uint64_t seed_ = 0;
    int d_c_ = 0;
    int latent_dim_ = 0;
    int words_per_lang_ = 0;
    float sigma_a_ = 0.0f;
    float sigma_b_ = 0.0f;
    Tensor image_map_;  // [d_c x latent], orthonormal columns, never trainable
    Tensor table_a_;    // [vocab x latent] per-language concept tables
    Tensor table_b_;
    std::shared_ptr<Counters> counters_ = std::make_shared<Counters>();
};

}  // namespace prefixmt
