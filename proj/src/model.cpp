#include "prefixmt/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "prefixmt/vocab.hpp"

namespace prefixmt {

const char* mn_variant_name(MnVariant v) {
    switch (v) {
        case MnVariant::Linear: return "linear";
        case MnVariant::MLP: return "mlp";
        case MnVariant::Enc: return "enc";
    }
    return "?";
}

MnVariant mn_variant_from_name(const std::string& s) {
    if (s == "linear") return MnVariant::Linear;
    if (s == "mlp") return MnVariant::MLP;
    if (s == "enc") return MnVariant::Enc;
    throw std::invalid_argument("unknown mapping network variant: " + s);
}

const char* prefix_position_name(PrefixPosition p) {
    return p == PrefixPosition::AfterStart ? "after_start" : "before_start";
}

PrefixPosition prefix_position_from_name(const std::string& s) {
    if (s == "after_start") return PrefixPosition::AfterStart;
    if (s == "before_start") return PrefixPosition::BeforeStart;
    throw std::invalid_argument("unknown prefix position: " + s);
}

void ModelConfig::validate() const {
    if (vocab_size <= 0 || d_b <= 0 || d_c <= 0 || n_layers <= 0 || n_heads <= 0 ||
        d_ff <= 0 || max_seq_len <= 0)
        throw std::invalid_argument("model dimensions must be positive");
    if (k < 0) throw std::invalid_argument("prefix length k must be >= 0");
    if (d_b % n_heads != 0) throw std::invalid_argument("d_b must be divisible by n_heads");
    if (dropout < 0.0f || dropout >= 1.0f) throw std::invalid_argument("dropout must lie in [0, 1)");
    if (k > 0 && mn_variant == MnVariant::Enc && d_b % 2 != 0)
        throw std::invalid_argument("the Enc mapping network needs an even d_b for its two heads");
}

namespace {

Tensor glorot(std::vector<int> shape, Rng& rng) {
    const float fan_in = static_cast<float>(shape[0]);
    const float fan_out = static_cast<float>(shape[1]);
    const float a = std::sqrt(6.0f / (fan_in + fan_out));
    return Tensor::uniform(std::move(shape), -a, a, rng, true);
}

Tensor emb_init(std::vector<int> shape, Rng& rng) {
    const float a = std::sqrt(3.0f / static_cast<float>(shape[1]));
    return Tensor::uniform(std::move(shape), -a, a, rng, true);
}

LayerNormParams ln_init(int d) {
    return {Tensor::full({d}, 1.0f, true), Tensor::zeros({d}, true)};
}

AttentionParams attn_init(int d, Rng& rng) {
    AttentionParams p;
    p.wq = glorot({d, d}, rng);
    p.bq = Tensor::zeros({d}, true);
    p.wk = glorot({d, d}, rng);
    p.bk = Tensor::zeros({d}, true);
    p.wv = glorot({d, d}, rng);
    p.bv = Tensor::zeros({d}, true);
    p.wo = glorot({d, d}, rng);
    p.bo = Tensor::zeros({d}, true);
    return p;
}

FfnParams ffn_init(int d, int d_ff, Rng& rng) {
    FfnParams p;
    p.w1 = glorot({d, d_ff}, rng);
    p.b1 = Tensor::zeros({d_ff}, true);
    p.w2 = glorot({d_ff, d}, rng);
    p.b2 = Tensor::zeros({d}, true);
    return p;
}

EncoderLayer enc_layer_init(int d, int d_ff, Rng& rng) {
    EncoderLayer l;
    l.ln1 = ln_init(d);
    l.ln2 = ln_init(d);
    l.attn = attn_init(d, rng);
    l.ffn = ffn_init(d, d_ff, rng);
    return l;
}

DecoderLayer dec_layer_init(int d, int d_ff, Rng& rng) {
    DecoderLayer l;
    l.ln1 = ln_init(d);
    l.ln2 = ln_init(d);
    l.ln3 = ln_init(d);
    l.self_attn = attn_init(d, rng);
    l.cross_attn = attn_init(d, rng);
    l.ffn = ffn_init(d, d_ff, rng);
    return l;
}

constexpr float kLnEps = 1e-5f;

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_bias(matmul(x, w), b);
}

Tensor maybe_dropout(const Tensor& x, const SeqModel& m, const ForwardCtx& ctx) {
    if (!ctx.train || m.cfg.dropout <= 0.0f) return x;
    if (!ctx.dropout_rng)
        throw TensorError("training forward requires a dropout rng");
    const float keep_scale = 1.0f / (1.0f - m.cfg.dropout);
    std::vector<float> mask(x.size());
    for (float& v : mask)
        v = ctx.dropout_rng->bernoulli(m.cfg.dropout) ? 0.0f : keep_scale;
    return dropout_mask(x, mask);
}

Tensor attention_block(const Tensor& x_normed, const Tensor& kv_src, const AttentionParams& p,
                       const Tensor& mask, int n_heads) {
    Tensor q = linear(x_normed, p.wq, p.bq);
    Tensor k = linear(kv_src, p.wk, p.bk);
    Tensor v = linear(kv_src, p.wv, p.bv);
    Tensor ctx_out = masked_attention(q, k, v, mask, n_heads);
    return linear(ctx_out, p.wo, p.bo);
}

Tensor ffn_block(const Tensor& x_normed, const FfnParams& p) {
    return linear(relu(linear(x_normed, p.w1, p.b1)), p.w2, p.b2);
}

Tensor encoder_layer_forward(const SeqModel& m, const EncoderLayer& l, Tensor x,
                             const Tensor& mask, const ForwardCtx& ctx, int n_heads) {
    Tensor x1 = layer_norm(x, l.ln1.gain, l.ln1.bias, kLnEps);
    x = add(x, maybe_dropout(attention_block(x1, x1, l.attn, mask, n_heads), m, ctx));
    Tensor x2 = layer_norm(x, l.ln2.gain, l.ln2.bias, kLnEps);
    x = add(x, maybe_dropout(ffn_block(x2, l.ffn), m, ctx));
    return x;
}

Tensor decoder_layer_forward(const SeqModel& m, const DecoderLayer& l, Tensor x,
                             const Tensor& self_mask, const Tensor& memory,
                             const Tensor& cross_mask, const ForwardCtx& ctx) {
    Tensor x1 = layer_norm(x, l.ln1.gain, l.ln1.bias, kLnEps);
    x = add(x, maybe_dropout(attention_block(x1, x1, l.self_attn, self_mask, m.cfg.n_heads), m, ctx));
    Tensor x2 = layer_norm(x, l.ln2.gain, l.ln2.bias, kLnEps);
    x = add(x, maybe_dropout(attention_block(x2, memory, l.cross_attn, cross_mask, m.cfg.n_heads), m, ctx));
    Tensor x3 = layer_norm(x, l.ln3.gain, l.ln3.bias, kLnEps);
    x = add(x, maybe_dropout(ffn_block(x3, l.ffn), m, ctx));
    return x;
}

void push_group(std::vector<NamedTensor>& out, const std::string& prefix,
                const LayerNormParams& ln) {
    out.push_back({prefix + ".gain", ln.gain});
    out.push_back({prefix + ".bias", ln.bias});
}

void push_group(std::vector<NamedTensor>& out, const std::string& prefix,
                const AttentionParams& a) {
    out.push_back({prefix + ".wq", a.wq});
    out.push_back({prefix + ".bq", a.bq});
    out.push_back({prefix + ".wk", a.wk});
    out.push_back({prefix + ".bk", a.bk});
    out.push_back({prefix + ".wv", a.wv});
    out.push_back({prefix + ".bv", a.bv});
    out.push_back({prefix + ".wo", a.wo});
    out.push_back({prefix + ".bo", a.bo});
}

void push_group(std::vector<NamedTensor>& out, const std::string& prefix, const FfnParams& f) {
    out.push_back({prefix + ".w1", f.w1});
    out.push_back({prefix + ".b1", f.b1});
    out.push_back({prefix + ".w2", f.w2});
    out.push_back({prefix + ".b2", f.b2});
}

void push_group(std::vector<NamedTensor>& out, const std::string& prefix, const EncoderLayer& l) {
    push_group(out, prefix + ".ln1", l.ln1);
    push_group(out, prefix + ".attn", l.attn);
    push_group(out, prefix + ".ln2", l.ln2);
    push_group(out, prefix + ".ffn", l.ffn);
}

}  // namespace

SeqModel SeqModel::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    SeqModel m;
    m.cfg = cfg;
    Rng rng(Rng::mix(seed, "model-init"));
    m.tok_emb = emb_init({cfg.vocab_size, cfg.d_b}, rng);
    m.pos_enc = emb_init({cfg.max_seq_len, cfg.d_b}, rng);
    m.pos_dec = emb_init({cfg.max_dec_len(), cfg.d_b}, rng);
    m.enc_final = ln_init(cfg.d_b);
    m.dec_final = ln_init(cfg.d_b);
    for (int i = 0; i < cfg.n_layers; ++i) {
        m.enc_layers.push_back(enc_layer_init(cfg.d_b, cfg.d_ff, rng));
        m.dec_layers.push_back(dec_layer_init(cfg.d_b, cfg.d_ff, rng));
    }
    if (cfg.k > 0) {
        m.mn.variant = cfg.mn_variant;
        const int out_dim = cfg.k * cfg.d_b;
        switch (cfg.mn_variant) {
            case MnVariant::Linear:
                m.mn.w1 = glorot({cfg.d_c, out_dim}, rng);
                m.mn.b1 = Tensor::zeros({out_dim}, true);
                m.mn.prelu_slope = Tensor::from({1}, {0.25f}, true);
                break;
            case MnVariant::MLP: {
                const int hidden = (cfg.d_c + out_dim) / 2;
                m.mn.w1 = glorot({cfg.d_c, hidden}, rng);
                m.mn.b1 = Tensor::zeros({hidden}, true);
                m.mn.w2 = glorot({hidden, out_dim}, rng);
                m.mn.b2 = Tensor::zeros({out_dim}, true);
                m.mn.prelu_slope = Tensor::from({1}, {0.25f}, true);
                break;
            }
            case MnVariant::Enc:
                m.mn.w1 = glorot({cfg.d_c, out_dim}, rng);
                m.mn.b1 = Tensor::zeros({out_dim}, true);
                m.mn.enc = enc_layer_init(cfg.d_b, cfg.d_ff, rng);
                break;
        }
    }
    return m;
}

std::vector<NamedTensor> SeqModel::theta_m() const {
    std::vector<NamedTensor> out;
    if (cfg.k == 0) return out;
    out.push_back({"mn.w1", mn.w1});
    out.push_back({"mn.b1", mn.b1});
    switch (mn.variant) {
        case MnVariant::Linear:
            out.push_back({"mn.prelu_slope", mn.prelu_slope});
            break;
        case MnVariant::MLP:
            out.push_back({"mn.w2", mn.w2});
            out.push_back({"mn.b2", mn.b2});
            out.push_back({"mn.prelu_slope", mn.prelu_slope});
            break;
        case MnVariant::Enc:
            push_group(out, "mn.enc", mn.enc);
            break;
    }
    return out;
}

std::vector<NamedTensor> SeqModel::theta_e() const {
    std::vector<NamedTensor> out;
    out.push_back({"tok_emb", tok_emb});
    out.push_back({"pos_enc", pos_enc});
    for (size_t i = 0; i < enc_layers.size(); ++i)
        push_group(out, "enc.layer" + std::to_string(i), enc_layers[i]);
    push_group(out, "enc.final", enc_final);
    return out;
}

std::vector<NamedTensor> SeqModel::theta_d() const {
    std::vector<NamedTensor> out;
    out.push_back({"pos_dec", pos_dec});
    for (size_t i = 0; i < dec_layers.size(); ++i) {
        const std::string p = "dec.layer" + std::to_string(i);
        const DecoderLayer& l = dec_layers[i];
        push_group(out, p + ".ln1", l.ln1);
        push_group(out, p + ".self", l.self_attn);
        push_group(out, p + ".ln2", l.ln2);
        push_group(out, p + ".cross", l.cross_attn);
        push_group(out, p + ".ln3", l.ln3);
        push_group(out, p + ".ffn", l.ffn);
    }
    push_group(out, "dec.final", dec_final);
    return out;
}

std::vector<NamedTensor> SeqModel::all_parameters() const {
    std::vector<NamedTensor> out = theta_m();
    for (auto& t : theta_e()) out.push_back(t);
    for (auto& t : theta_d()) out.push_back(t);
    return out;
}

std::vector<NamedTensor> SeqModel::group(char g) const {
    switch (g) {
        case 'm': return theta_m();
        case 'e': return theta_e();
        case 'd': return theta_d();
    }
    throw std::invalid_argument("unknown parameter group");
}

void SeqModel::set_group_trainable(char g, bool on) {
    for (auto& nt : group(g)) nt.tensor.set_requires_grad(on);
}

uint64_t SeqModel::group_hash(char g) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& nt : group(g)) {
        h = fnv1a64(nt.name.data(), nt.name.size(), h);
        h = tensor_hash(nt.tensor, h);
    }
    return h;
}

void SeqModel::zero_all_grads() {
    for (auto& nt : all_parameters()) nt.tensor.clear_grad();
}

std::vector<uint8_t> decoder_attention_allowed(int k, int n_text, PrefixPosition pos) {
    if (k < 0 || n_text < 0) throw TensorError("decoder mask dimensions must be nonnegative");
    const int L = 1 + k + n_text;
    // prefix block column/row range
    const int p0 = pos == PrefixPosition::AfterStart ? 1 : 0;
    const int p1 = p0 + k;
    std::vector<uint8_t> allowed(static_cast<size_t>(L) * L, 0);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j) {
            const bool in_block = i >= p0 && i < p1 && j >= p0 && j < p1;
            if (j <= i || in_block) allowed[static_cast<size_t>(i) * L + j] = 1;
        }
    return allowed;
}

Tensor build_decoder_mask(int k, int n_text, PrefixPosition pos) {
    if (n_text < 1) throw TensorError("build_decoder_mask requires n_text >= 1");
    const auto allowed = decoder_attention_allowed(k, n_text, pos);
    const int L = 1 + k + n_text;
    std::vector<float> mask(allowed.size());
    for (size_t i = 0; i < allowed.size(); ++i)
        mask[i] = allowed[i] ? 0.0f : std::numeric_limits<float>::lowest();
    return Tensor::from({L, L}, std::move(mask));
}

PrefixSequence map_prefix(const SeqModel& m, const Tensor& h) {
    PrefixSequence seq;
    seq.k = m.cfg.k;
    if (m.cfg.k == 0) return seq;
    if (h.ndim() != 1 || h.dim(0) != m.cfg.d_c)
        throw TensorError("map_prefix input must be a vector of length d_c");
    Tensor row = reshape(h, {1, m.cfg.d_c});
    switch (m.mn.variant) {
        case MnVariant::Linear: {
            Tensor out = prelu(linear(row, m.mn.w1, m.mn.b1), m.mn.prelu_slope);
            seq.z = reshape(out, {m.cfg.k, m.cfg.d_b});
            break;
        }
        case MnVariant::MLP: {
            Tensor hidden = relu(linear(row, m.mn.w1, m.mn.b1));
            Tensor out = prelu(linear(hidden, m.mn.w2, m.mn.b2), m.mn.prelu_slope);
            seq.z = reshape(out, {m.cfg.k, m.cfg.d_b});
            break;
        }
        case MnVariant::Enc: {
            Tensor slots = reshape(linear(row, m.mn.w1, m.mn.b1), {m.cfg.k, m.cfg.d_b});
            Tensor mask = Tensor::zeros({m.cfg.k, m.cfg.k});
            ForwardCtx ctx;  // the mapping layer itself runs without dropout
            seq.z = encoder_layer_forward(m, m.mn.enc, slots, mask, ctx, 2);  // two heads
            break;
        }
    }
    return seq;
}

Tensor encode_source(const SeqModel& m, std::span<const int> tokens, const ForwardCtx& ctx) {
    if (tokens.empty()) throw TensorError("encode_source requires at least one token");
    if (static_cast<int>(tokens.size()) > m.cfg.max_seq_len)
        throw TensorError("encode_source input longer than max_seq_len");
    const int L = static_cast<int>(tokens.size());
    const float s = std::sqrt(static_cast<float>(m.cfg.d_b));
    Tensor x = add(scale(embedding(tokens, m.tok_emb), s), slice_rows(m.pos_enc, 0, L));
    Tensor mask = Tensor::zeros({L, L});
    for (const EncoderLayer& l : m.enc_layers)
        x = encoder_layer_forward(m, l, x, mask, ctx, m.cfg.n_heads);
    return layer_norm(x, m.enc_final.gain, m.enc_final.bias, kLnEps);
}

Tensor assemble_decoder_rows(const SeqModel& m, const PrefixSequence& z,
                             std::span<const int> text_tokens) {
    if (z.k != m.cfg.k) throw TensorError("prefix length does not match the model config");
    const int n_text = static_cast<int>(text_tokens.size());
    const int L = 1 + m.cfg.k + n_text;
    if (L > m.cfg.max_dec_len()) throw TensorError("decoder input longer than max_dec_len");
    const float s = std::sqrt(static_cast<float>(m.cfg.d_b));
    const std::vector<int> start_ids{Vocabulary::START_SENT};
    Tensor start_row = scale(embedding(start_ids, m.tok_emb), s);
    std::vector<Tensor> parts;
    if (m.cfg.k == 0) {
        parts.push_back(start_row);
        if (n_text > 0) parts.push_back(scale(embedding(text_tokens, m.tok_emb), s));
    } else if (m.cfg.prefix_position == PrefixPosition::AfterStart) {
        parts.push_back(start_row);
        parts.push_back(z.z);
        if (n_text > 0) parts.push_back(scale(embedding(text_tokens, m.tok_emb), s));
    } else {
        parts.push_back(z.z);
        parts.push_back(start_row);
        if (n_text > 0) parts.push_back(scale(embedding(text_tokens, m.tok_emb), s));
    }
    return add(concat_rows(parts), slice_rows(m.pos_dec, 0, L));
}

Tensor forward_logits(const SeqModel& m, const PrefixSequence& z,
                      std::span<const int> shifted_targets, const Tensor& memory,
                      const ForwardCtx& ctx) {
    if (shifted_targets.empty()) throw TensorError("forward_logits requires at least one text token");
    if (!memory.defined() || memory.ndim() != 2 || memory.dim(1) != m.cfg.d_b)
        throw TensorError("forward_logits memory shape mismatch");
    const int n_text = static_cast<int>(shifted_targets.size());
    Tensor x = assemble_decoder_rows(m, z, shifted_targets);
    const int L = x.dim(0);
    Tensor self_mask = build_decoder_mask(m.cfg.k, n_text, m.cfg.prefix_position);
    Tensor cross_mask = Tensor::zeros({L, memory.dim(0)});
    for (const DecoderLayer& l : m.dec_layers)
        x = decoder_layer_forward(m, l, x, self_mask, memory, cross_mask, ctx);
    x = layer_norm(x, m.dec_final.gain, m.dec_final.bias, kLnEps);
    return matmul_nt(x, m.tok_emb);  // tied output projection
}

Tensor sequence_loss(const Tensor& logits, std::span<const int> text_targets, int k) {
    if (logits.ndim() != 2) throw TensorError("sequence_loss expects 2-D logits");
    const int L = logits.dim(0);
    const int n_text = L - 1 - k;
    if (n_text < 1) throw TensorError("sequence_loss: empty text span");
    if (static_cast<int>(text_targets.size()) != n_text)
        throw TensorError("sequence_loss target count mismatch");
    std::vector<int> full(static_cast<size_t>(L), 0);
    std::vector<uint8_t> ignore(static_cast<size_t>(L), 0);
    for (int i = 0; i < 1 + k; ++i) ignore[static_cast<size_t>(i)] = 1;
    bool any_active = false;
    for (int i = 0; i < n_text; ++i) {
        const int tgt = text_targets[static_cast<size_t>(i)];
        full[static_cast<size_t>(1 + k + i)] = tgt;
        if (tgt == 0) {  // PAD label
            ignore[static_cast<size_t>(1 + k + i)] = 1;
        } else {
            any_active = true;
        }
    }
    if (!any_active) throw TensorError("sequence_loss: empty text span");
    return cross_entropy(logits, full, ignore);
}

}  // namespace prefixmt
