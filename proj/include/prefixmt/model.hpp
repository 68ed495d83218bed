#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefixmt/rng.hpp"
#include "prefixmt/tensor.hpp"

namespace prefixmt {

enum class MnVariant { Linear, MLP, Enc };
enum class PrefixPosition { AfterStart, BeforeStart };

const char* mn_variant_name(MnVariant v);
MnVariant mn_variant_from_name(const std::string& s);
const char* prefix_position_name(PrefixPosition p);
PrefixPosition prefix_position_from_name(const std::string& s);

struct ModelConfig {
    int vocab_size = 134;
    int d_b = 64;   // backbone embedding dim
    int d_c = 64;   // oracle embedding dim
    int k = 10;     // prefix length
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 128;
    int max_seq_len = 40;
    MnVariant mn_variant = MnVariant::Linear;
    PrefixPosition prefix_position = PrefixPosition::AfterStart;
    float dropout = 0.1f;

    int max_dec_len() const { return 1 + k + max_seq_len; }
    void validate() const;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct LayerNormParams {
    Tensor gain, bias;
};

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FfnParams {
    Tensor w1, b1, w2, b2;
};

struct EncoderLayer {
    LayerNormParams ln1, ln2;
    AttentionParams attn;
    FfnParams ffn;
};

struct DecoderLayer {
    LayerNormParams ln1, ln2, ln3;
    AttentionParams self_attn, cross_attn;
    FfnParams ffn;
};

// Maps one oracle embedding to k decoder-input slots.
//   Linear: reshape(PReLU(W h + b))
//   MLP:    Linear -> ReLU -> Linear -> PReLU
//   Enc:    projection, then one two-head transformer layer over the slots
struct MappingNetwork {
    MnVariant variant = MnVariant::Linear;
    Tensor w1, b1;
    Tensor w2, b2;          // MLP only
    Tensor prelu_slope;     // Linear / MLP output activation
    EncoderLayer enc;       // Enc only
};

struct PrefixSequence {
    Tensor z;  // [k x d_b]; undefined when k == 0
    int k = 0;
};

struct ForwardCtx {
    bool train = false;
    Rng* dropout_rng = nullptr;  // needed when train and dropout > 0
};

struct SeqModel {
    ModelConfig cfg;
    Tensor tok_emb;  // [V x d_b], tied input/output embedding (theta_e)
    Tensor pos_enc;  // [max_seq_len x d_b] learned absolute positions (theta_e)
    Tensor pos_dec;  // [max_dec_len x d_b] (theta_d); prefix slots get positions too
    LayerNormParams enc_final, dec_final;
    std::vector<EncoderLayer> enc_layers;
    std::vector<DecoderLayer> dec_layers;
    MappingNetwork mn;  // absent when k == 0

    static SeqModel init(const ModelConfig& cfg, uint64_t seed);

    std::vector<NamedTensor> theta_m() const;
    std::vector<NamedTensor> theta_e() const;
    std::vector<NamedTensor> theta_d() const;
    std::vector<NamedTensor> all_parameters() const;  // m + e + d, fixed order
    std::vector<NamedTensor> group(char g) const;     // 'm' | 'e' | 'd'
    void set_group_trainable(char g, bool on);
    uint64_t group_hash(char g) const;
    void zero_all_grads();
};

// Boolean allowed-attention matrix (row-major, 1 = may attend). Row i may
// attend column j iff j <= i, or both i and j lie in the prefix block.
// n_text == 0 is allowed here for the prefix-only block used at decode init.
std::vector<uint8_t> decoder_attention_allowed(int k, int n_text, PrefixPosition pos);

// Additive mask tensor for the decoder self-attention; n_text >= 1.
Tensor build_decoder_mask(int k, int n_text, PrefixPosition pos = PrefixPosition::AfterStart);

PrefixSequence map_prefix(const SeqModel& m, const Tensor& h);

Tensor encode_source(const SeqModel& m, std::span<const int> tokens, const ForwardCtx& ctx);

// Decoder forward over [start, prefix, shifted targets]; logits at every
// position, [1+k+n_text x V].
Tensor forward_logits(const SeqModel& m, const PrefixSequence& z,
                      std::span<const int> shifted_targets, const Tensor& memory,
                      const ForwardCtx& ctx);

// Cross entropy over text positions only: the start token and all k prefix
// positions are ignored, as are PAD labels.
Tensor sequence_loss(const Tensor& logits, std::span<const int> text_targets, int k);

// Assembled decoder input rows (shared by training forward and the
// incremental decoder so the two stay bit-identical).
Tensor assemble_decoder_rows(const SeqModel& m, const PrefixSequence& z,
                             std::span<const int> text_tokens);

}  // namespace prefixmt
