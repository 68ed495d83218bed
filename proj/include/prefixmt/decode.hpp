#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "prefixmt/bleu.hpp"
#include "prefixmt/model.hpp"
#include "prefixmt/oracle.hpp"
#include "prefixmt/world.hpp"

namespace prefixmt {

enum class DecodeMode { HallucinateFromText, GroundTruthImage, PrefixOnly };

const char* decode_mode_name(DecodeMode m);
DecodeMode decode_mode_from_name(const std::string& s);

struct DecodeConfig {
    int beam_size = 5;
    int max_len = 24;            // cap on generated tokens per sentence
    float length_penalty = 1.0f;
    void validate() const;
};

struct DecodeResult {
    std::vector<int> tokens;    // generated content tokens (tag and END stripped)
    double raw_logprob = 0.0;   // summed log-probs of scored tokens
    int n_scored = 0;           // generated tokens incl. the closing END
    double score = 0.0;         // raw_logprob / n_scored^length_penalty
    bool finished = false;      // END_SENT emitted before max_len
};

// Stepwise decoder with per-layer self/cross attention caches. Arithmetic
// follows the training forward exactly (same kernels, same per-element
// order), so a cached decode is bit-identical to forward_logits.
class IncrementalDecoder {
public:
    IncrementalDecoder(const SeqModel& m, const Tensor& memory, const PrefixSequence& z);

    // Appends one text token and returns the logits row predicting the next.
    std::vector<float> step(int token);
    int cached_len() const { return len_; }

private:
    struct LayerCache {
        std::vector<float> self_k, self_v;    // appended rows, [len x d]
        std::vector<float> cross_k, cross_v;  // fixed, [mem_len x d]
    };

    void process_rows(const float* rows, int n_rows, const float* block_mask);

    const SeqModel* m_;
    int mem_len_ = 0;
    int len_ = 0;  // rows cached so far
    std::vector<LayerCache> caches_;
    std::vector<float> last_logits_;
};

DecodeResult greedy_decode(const SeqModel& m, const PrefixSequence& z, const Tensor& memory,
                           int forced_lang_tag, const DecodeConfig& cfg);

// Length-normalized beam search; ties break toward the lower token id, then
// the earlier-finished hypothesis. beam_size == 1 matches greedy exactly.
DecodeResult beam_search(const SeqModel& m, const PrefixSequence& z, const Tensor& memory,
                         int forced_lang_tag, const DecodeConfig& cfg);

// End-to-end translation of one source sentence. The oracle may be null for
// a k == 0 text-only model, which never consults it.
DecodeResult translate(const SeqModel& m, const Oracle* oracle, const Vocabulary& vocab,
                       std::span<const int> src_content, const std::vector<float>* image_latent,
                       int src_lang, int tgt_lang, DecodeMode mode, const DecodeConfig& cfg);

// Fig.-5-style probe: decode with a trivial source so only the prefix feeds
// the decoder. The prefix comes from an image latent or from text.
struct ProbeSource {
    bool is_image = true;
    const std::vector<float>* latent = nullptr;
    std::vector<int> tokens;
    int lang = 0;
};
DecodeResult decode_prefix_only(const SeqModel& m, const Oracle& oracle,
                                const ProbeSource& src, int out_lang, const DecodeConfig& cfg);

struct EvalScore {
    double bleu = 0.0;
    size_t n_sentences = 0;
};

// Decodes a whole split and scores corpus BLEU against the target captions.
EvalScore evaluate_bleu(const SeqModel& m, const Oracle* oracle, const Corpus& corpus,
                        Split split, int src_lang, int tgt_lang, DecodeMode mode,
                        const DecodeConfig& cfg);

}  // namespace prefixmt
