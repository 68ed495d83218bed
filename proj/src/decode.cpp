#include "prefixmt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "prefixmt/kernels.hpp"

namespace prefixmt {

const char* decode_mode_name(DecodeMode m) {
    switch (m) {
        case DecodeMode::HallucinateFromText: return "hallucinate";
        case DecodeMode::GroundTruthImage: return "image";
        case DecodeMode::PrefixOnly: return "prefix_only";
    }
    return "?";
}

DecodeMode decode_mode_from_name(const std::string& s) {
    if (s == "hallucinate") return DecodeMode::HallucinateFromText;
    if (s == "image") return DecodeMode::GroundTruthImage;
    if (s == "prefix_only") return DecodeMode::PrefixOnly;
    throw std::invalid_argument("unknown decode mode: " + s);
}

void DecodeConfig::validate() const {
    if (beam_size < 1) throw TensorError("beam_size must be >= 1");
    if (max_len < 1) throw TensorError("max_len must be >= 1");
}

namespace {

constexpr float kLnEps = 1e-5f;

void linear_rows(const float* x, int n, const Tensor& w, const Tensor& b, float* out) {
    const int d_in = w.dim(0), d_out = w.dim(1);
    kernels::matmul_nn(x, w.values().data(), out, n, d_in, d_out);
    const float* bv = b.values().data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d_out; ++j) out[static_cast<size_t>(i) * d_out + j] += bv[j];
}

// multi-head attention over explicit buffers; mirrors masked_attention()
// arithmetic exactly (same kernels, same per-element order)
void attention_rows(const float* q, int lq, const float* k, const float* v, int lk,
                    const float* add_mask /* [lq x lk] or nullptr = zeros */, int d,
                    int n_heads, float* out) {
    const int dh = d / n_heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<float> qh(static_cast<size_t>(lq) * dh), kh(static_cast<size_t>(lk) * dh),
        vh(static_cast<size_t>(lk) * dh), sc(static_cast<size_t>(lq) * lk),
        pr(static_cast<size_t>(lq) * lk), oh(static_cast<size_t>(lq) * dh);
    for (int h = 0; h < n_heads; ++h) {
        const int c0 = h * dh;
        for (int i = 0; i < lq; ++i)
            std::memcpy(qh.data() + static_cast<size_t>(i) * dh,
                        q + static_cast<size_t>(i) * d + c0, sizeof(float) * dh);
        for (int i = 0; i < lk; ++i) {
            std::memcpy(kh.data() + static_cast<size_t>(i) * dh,
                        k + static_cast<size_t>(i) * d + c0, sizeof(float) * dh);
            std::memcpy(vh.data() + static_cast<size_t>(i) * dh,
                        v + static_cast<size_t>(i) * d + c0, sizeof(float) * dh);
        }
        kernels::matmul_nt(qh.data(), kh.data(), sc.data(), lq, dh, lk);
        for (int i = 0; i < lq; ++i)
            for (int j = 0; j < lk; ++j) {
                float& s = sc[static_cast<size_t>(i) * lk + j];
                s = s * inv_sqrt + (add_mask ? add_mask[static_cast<size_t>(i) * lk + j] : 0.0f);
            }
        kernels::softmax_rows(sc.data(), pr.data(), lq, lk);
        kernels::matmul_nn(pr.data(), vh.data(), oh.data(), lq, lk, dh);
        for (int i = 0; i < lq; ++i)
            std::memcpy(out + static_cast<size_t>(i) * d + c0,
                        oh.data() + static_cast<size_t>(i) * dh, sizeof(float) * dh);
    }
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const SeqModel& m, const Tensor& memory,
                                       const PrefixSequence& z)
    : m_(&m) {
    if (!memory.defined() || memory.ndim() != 2 || memory.dim(1) != m.cfg.d_b)
        throw TensorError("incremental decoder: memory shape mismatch");
    mem_len_ = memory.dim(0);
    caches_.resize(static_cast<size_t>(m.cfg.n_layers));
    const int d = m.cfg.d_b;
    for (int l = 0; l < m.cfg.n_layers; ++l) {
        LayerCache& c = caches_[static_cast<size_t>(l)];
        const AttentionParams& ca = m.dec_layers[static_cast<size_t>(l)].cross_attn;
        c.cross_k.resize(static_cast<size_t>(mem_len_) * d);
        c.cross_v.resize(static_cast<size_t>(mem_len_) * d);
        linear_rows(memory.values().data(), mem_len_, ca.wk, ca.bk, c.cross_k.data());
        linear_rows(memory.values().data(), mem_len_, ca.wv, ca.bv, c.cross_v.data());
    }
    // start + prefix block processed jointly under the block-bidirectional mask
    Tensor block = assemble_decoder_rows(m, z, {});
    const int B = block.dim(0);
    const auto allowed = decoder_attention_allowed(m.cfg.k, 0, m.cfg.prefix_position);
    std::vector<float> mask(allowed.size());
    for (size_t i = 0; i < allowed.size(); ++i)
        mask[i] = allowed[i] ? 0.0f : std::numeric_limits<float>::lowest();
    process_rows(block.values().data(), B, mask.data());
}

void IncrementalDecoder::process_rows(const float* rows, int n_rows, const float* block_mask) {
    const SeqModel& m = *m_;
    const int d = m.cfg.d_b;
    const int prev_len = len_;
    const int total = prev_len + n_rows;
    std::vector<float> x(rows, rows + static_cast<size_t>(n_rows) * d);
    std::vector<float> xn(static_cast<size_t>(n_rows) * d), tmp(static_cast<size_t>(n_rows) * d),
        attn(static_cast<size_t>(n_rows) * d);
    // block_mask, when given, covers only the new rows (prev_len == 0 then);
    // otherwise every cached position is attendable: additive zero
    std::vector<float> mask(static_cast<size_t>(n_rows) * total, 0.0f);
    if (block_mask) {
        if (prev_len != 0) throw TensorError("block mask only valid for the initial rows");
        std::memcpy(mask.data(), block_mask, sizeof(float) * mask.size());
    }
    for (int l = 0; l < m.cfg.n_layers; ++l) {
        const DecoderLayer& layer = m.dec_layers[static_cast<size_t>(l)];
        LayerCache& c = caches_[static_cast<size_t>(l)];
        // self-attention
        kernels::layer_norm_rows(x.data(), layer.ln1.gain.values().data(),
                                 layer.ln1.bias.values().data(), kLnEps, xn.data(), n_rows, d);
        std::vector<float> q(static_cast<size_t>(n_rows) * d);
        linear_rows(xn.data(), n_rows, layer.self_attn.wq, layer.self_attn.bq, q.data());
        const size_t old = c.self_k.size();
        c.self_k.resize(old + static_cast<size_t>(n_rows) * d);
        c.self_v.resize(old + static_cast<size_t>(n_rows) * d);
        linear_rows(xn.data(), n_rows, layer.self_attn.wk, layer.self_attn.bk, c.self_k.data() + old);
        linear_rows(xn.data(), n_rows, layer.self_attn.wv, layer.self_attn.bv, c.self_v.data() + old);
        attention_rows(q.data(), n_rows, c.self_k.data(), c.self_v.data(), total, mask.data(), d,
                       m.cfg.n_heads, attn.data());
        linear_rows(attn.data(), n_rows, layer.self_attn.wo, layer.self_attn.bo, tmp.data());
        kernels::vec_add(x.data(), tmp.data(), x.data(), x.size());
        // cross-attention
        kernels::layer_norm_rows(x.data(), layer.ln2.gain.values().data(),
                                 layer.ln2.bias.values().data(), kLnEps, xn.data(), n_rows, d);
        linear_rows(xn.data(), n_rows, layer.cross_attn.wq, layer.cross_attn.bq, q.data());
        attention_rows(q.data(), n_rows, c.cross_k.data(), c.cross_v.data(), mem_len_, nullptr, d,
                       m.cfg.n_heads, attn.data());
        linear_rows(attn.data(), n_rows, layer.cross_attn.wo, layer.cross_attn.bo, tmp.data());
        kernels::vec_add(x.data(), tmp.data(), x.data(), x.size());
        // feed-forward
        kernels::layer_norm_rows(x.data(), layer.ln3.gain.values().data(),
                                 layer.ln3.bias.values().data(), kLnEps, xn.data(), n_rows, d);
        std::vector<float> hidden(static_cast<size_t>(n_rows) * m.cfg.d_ff);
        linear_rows(xn.data(), n_rows, layer.ffn.w1, layer.ffn.b1, hidden.data());
        for (float& v : hidden) v = v > 0.0f ? v : 0.0f;
        linear_rows(hidden.data(), n_rows, layer.ffn.w2, layer.ffn.b2, tmp.data());
        kernels::vec_add(x.data(), tmp.data(), x.data(), x.size());
    }
    kernels::layer_norm_rows(x.data(), m.dec_final.gain.values().data(),
                             m.dec_final.bias.values().data(), kLnEps, xn.data(), n_rows, d);
    // logits for the last processed row only
    last_logits_.assign(static_cast<size_t>(m.cfg.vocab_size), 0.0f);
    kernels::matmul_nt(xn.data() + static_cast<size_t>(n_rows - 1) * d,
                       m.tok_emb.values().data(), last_logits_.data(), 1, d, m.cfg.vocab_size);
    len_ = total;
}

std::vector<float> IncrementalDecoder::step(int token) {
    const SeqModel& m = *m_;
    if (token < 0 || token >= m.cfg.vocab_size)
        throw TensorError("decode step: token id out of range");
    if (len_ >= m.cfg.max_dec_len())
        throw TensorError("decode step: exceeded max decoder length");
    const int d = m.cfg.d_b;
    const float s = std::sqrt(static_cast<float>(d));
    std::vector<float> row(static_cast<size_t>(d));
    const float* emb = m.tok_emb.values().data() + static_cast<size_t>(token) * d;
    const float* pos = m.pos_dec.values().data() + static_cast<size_t>(len_) * d;
    for (int j = 0; j < d; ++j) row[static_cast<size_t>(j)] = emb[j] * s + pos[j];
    process_rows(row.data(), 1, nullptr);
    return last_logits_;
}

namespace {

std::vector<double> log_softmax_double(const std::vector<float>& logits) {
    double mx = logits[0];
    for (float v : logits) mx = std::max(mx, static_cast<double>(v));
    double se = 0.0;
    for (float v : logits) se += std::exp(static_cast<double>(v) - mx);
    const double lse = mx + std::log(se);
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
    return out;
}

DecodeResult finalize(std::vector<int> tokens, double raw, int n_scored, bool finished,
                      float length_penalty) {
    DecodeResult r;
    r.tokens = std::move(tokens);
    r.raw_logprob = raw;
    r.n_scored = n_scored;
    r.finished = finished;
    const double denom = std::pow(static_cast<double>(std::max(1, n_scored)),
                                  static_cast<double>(length_penalty));
    r.score = raw / denom;
    return r;
}

int max_generation_steps(const SeqModel& m, const DecodeConfig& cfg) {
    // positions: [start/prefix block][forced lang tag][generated...]
    const int room = m.cfg.max_dec_len() - (1 + m.cfg.k) - 1;
    return std::max(1, std::min(cfg.max_len, room));
}

}  // namespace

DecodeResult greedy_decode(const SeqModel& m, const PrefixSequence& z, const Tensor& memory,
                           int forced_lang_tag, const DecodeConfig& cfg) {
    cfg.validate();
    IncrementalDecoder dec(m, memory, z);
    std::vector<float> logits = dec.step(forced_lang_tag);
    std::vector<int> tokens;
    double raw = 0.0;
    int n_scored = 0;
    const int max_steps = max_generation_steps(m, cfg);
    for (int t = 0; t < max_steps; ++t) {
        const auto lp = log_softmax_double(logits);
        int best = 0;
        for (size_t i = 1; i < lp.size(); ++i)
            if (lp[i] > lp[static_cast<size_t>(best)]) best = static_cast<int>(i);
        raw += lp[static_cast<size_t>(best)];
        ++n_scored;
        if (best == Vocabulary::END_SENT)
            return finalize(std::move(tokens), raw, n_scored, true, cfg.length_penalty);
        tokens.push_back(best);
        logits = dec.step(best);
    }
    return finalize(std::move(tokens), raw, n_scored, false, cfg.length_penalty);
}

DecodeResult beam_search(const SeqModel& m, const PrefixSequence& z, const Tensor& memory,
                         int forced_lang_tag, const DecodeConfig& cfg) {
    cfg.validate();
    struct Hyp {
        IncrementalDecoder dec;
        std::vector<float> logits;
        std::vector<int> tokens;
        double raw = 0.0;
        int n_scored = 0;
    };
    IncrementalDecoder root(m, memory, z);
    std::vector<float> first = root.step(forced_lang_tag);
    std::vector<Hyp> live;
    live.push_back(Hyp{std::move(root), std::move(first), {}, 0.0, 0});
    std::vector<DecodeResult> done;
    const int beam = cfg.beam_size;
    const int max_steps = max_generation_steps(m, cfg);

    // best normalized score any live hypothesis could still reach: log-probs
    // are nonpositive, so the optimum is a free ride to the length cap
    auto live_bound = [&](const Hyp& h, int steps_left) {
        const int longest = h.n_scored + std::max(1, steps_left);
        return h.raw / std::pow(static_cast<double>(longest),
                                static_cast<double>(cfg.length_penalty));
    };

    for (int t = 0; t < max_steps && !live.empty(); ++t) {
        struct Cand {
            double score;
            int token;
            int parent;
        };
        std::vector<Cand> cands;
        cands.reserve(live.size() * static_cast<size_t>(m.cfg.vocab_size));
        for (size_t i = 0; i < live.size(); ++i) {
            const auto lp = log_softmax_double(live[i].logits);
            for (int tok = 0; tok < m.cfg.vocab_size; ++tok)
                cands.push_back({live[i].raw + lp[static_cast<size_t>(tok)], tok,
                                 static_cast<int>(i)});
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.token != b.token) return a.token < b.token;
            return a.parent < b.parent;
        });
        // standard top-2*beam scan: only candidates that rank within the
        // current step's head may finish or continue
        std::vector<Hyp> next;
        int scanned = 0;
        for (const Cand& c : cands) {
            if (scanned >= 2 * beam || static_cast<int>(next.size()) >= beam) break;
            ++scanned;
            const Hyp& parent = live[static_cast<size_t>(c.parent)];
            if (c.token == Vocabulary::END_SENT) {
                done.push_back(finalize(parent.tokens, c.score, parent.n_scored + 1, true,
                                        cfg.length_penalty));
            } else {
                Hyp h{parent.dec, {}, parent.tokens, c.score, parent.n_scored + 1};
                h.tokens.push_back(c.token);
                h.logits = h.dec.step(c.token);
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);
        if (!done.empty()) {
            double best_done = -std::numeric_limits<double>::infinity();
            for (const DecodeResult& d : done) best_done = std::max(best_done, d.score);
            double best_live = -std::numeric_limits<double>::infinity();
            for (const Hyp& h : live)
                best_live = std::max(best_live, live_bound(h, max_steps - (t + 1)));
            if (best_done >= best_live) break;
        }
    }
    if (!done.empty()) {
        size_t best = 0;
        for (size_t i = 1; i < done.size(); ++i)
            if (done[i].score > done[best].score) best = i;  // ties keep the earlier finish
        return done[best];
    }
    // max_len exhausted with nothing finished: best unfinished, flagged
    size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < live.size(); ++i) {
        const double s = live[i].raw / std::pow(static_cast<double>(std::max(1, live[i].n_scored)),
                                                static_cast<double>(cfg.length_penalty));
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return finalize(live[best].tokens, live[best].raw, live[best].n_scored, false,
                    cfg.length_penalty);
}

DecodeResult translate(const SeqModel& m, const Oracle* oracle, const Vocabulary& vocab,
                       std::span<const int> src_content, const std::vector<float>* image_latent,
                       int src_lang, int tgt_lang, DecodeMode mode, const DecodeConfig& cfg) {
    cfg.validate();
    PrefixSequence z;
    z.k = m.cfg.k;
    if (m.cfg.k > 0) {
        if (!oracle) throw TensorError("translate: a prefix model needs the oracle");
        Tensor h;
        switch (mode) {
            case DecodeMode::HallucinateFromText:
                h = oracle->encode_text(src_content, src_lang).h;
                break;
            case DecodeMode::GroundTruthImage:
                if (!image_latent)
                    throw TensorError("translate: image mode requires an image latent");
                h = oracle->encode_image(*image_latent).h;
                break;
            case DecodeMode::PrefixOnly:
                throw TensorError("translate: prefix-only probing uses decode_prefix_only");
        }
        z = map_prefix(m, h);
    }
    ForwardCtx ctx;
    Tensor memory = encode_source(m, frame_sentence(src_content, src_lang, vocab), ctx);
    return beam_search(m, z, memory, vocab.lang_tag(tgt_lang), cfg);
}

DecodeResult decode_prefix_only(const SeqModel& m, const Oracle& oracle,
                                const ProbeSource& src, int out_lang, const DecodeConfig& cfg) {
    cfg.validate();
    if (m.cfg.k == 0) throw TensorError("decode_prefix_only needs a prefix model");
    Tensor h;
    if (src.is_image) {
        if (!src.latent) throw TensorError("decode_prefix_only: missing image latent");
        h = oracle.encode_image(*src.latent).h;
    } else {
        h = oracle.encode_text(src.tokens, src.lang).h;
    }
    PrefixSequence z = map_prefix(m, h);
    ForwardCtx ctx;
    Tensor memory = encode_source(m, trivial_source(), ctx);
    const int tag = out_lang == 0 ? Vocabulary::LANG_A : Vocabulary::LANG_B;
    return beam_search(m, z, memory, tag, cfg);
}

EvalScore evaluate_bleu(const SeqModel& m, const Oracle* oracle, const Corpus& corpus,
                        Split split, int src_lang, int tgt_lang, DecodeMode mode,
                        const DecodeConfig& cfg) {
    auto records = corpus.split(split);
    if (records.empty()) throw CorpusError("evaluate_bleu: empty split");
    const int n = static_cast<int>(records.size());
    std::vector<std::vector<int>> hyps(static_cast<size_t>(n)), refs(static_cast<size_t>(n));
    // sentences decode independently; aggregation below is order-fixed
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
    for (int i = 0; i < n; ++i) {
        const Triplet& t = *records[static_cast<size_t>(i)];
        DecodeResult r = translate(m, oracle, corpus.vocab, corpus.caption(t, src_lang),
                                   &t.latent, src_lang, tgt_lang, mode, cfg);
        hyps[static_cast<size_t>(i)] = std::move(r.tokens);
        refs[static_cast<size_t>(i)] = corpus.caption(t, tgt_lang);
    }
    return {corpus_bleu(hyps, refs), static_cast<size_t>(n)};
}

}  // namespace prefixmt
