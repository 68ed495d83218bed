#include "prefixmt/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace prefixmt {

namespace {

// Orthonormal columns via Gram-Schmidt in double precision; the map then
// preserves inner products from latent space into the d_c-dim oracle space.
Tensor build_image_map(uint64_t seed, int d_c, int latent_dim) {
    Rng rng(Rng::mix(seed, "image-map"));
    std::vector<std::vector<double>> cols(static_cast<size_t>(latent_dim),
                                          std::vector<double>(static_cast<size_t>(d_c)));
    for (auto& col : cols) {
        for (double& x : col) x = rng.normal();
    }
    for (int j = 0; j < latent_dim; ++j) {
        auto& col = cols[static_cast<size_t>(j)];
        for (int prev = 0; prev < j; ++prev) {
            const auto& p = cols[static_cast<size_t>(prev)];
            double dot = 0.0;
            for (int i = 0; i < d_c; ++i) dot += col[static_cast<size_t>(i)] * p[static_cast<size_t>(i)];
            for (int i = 0; i < d_c; ++i) col[static_cast<size_t>(i)] -= dot * p[static_cast<size_t>(i)];
        }
        double norm = 0.0;
        for (double x : col) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-9) throw std::runtime_error("degenerate image map column");
        for (double& x : col) x /= norm;
    }
    std::vector<float> values(static_cast<size_t>(d_c) * latent_dim);
    for (int i = 0; i < d_c; ++i)
        for (int j = 0; j < latent_dim; ++j)
            values[static_cast<size_t>(i) * latent_dim + j] =
                static_cast<float>(cols[static_cast<size_t>(j)][static_cast<size_t>(i)]);
    return Tensor::from({d_c, latent_dim}, std::move(values));
}

// deterministic pseudo-noise keyed on (tokens, lang, seed); unit norm
Tensor pseudo_noise(uint64_t seed, std::span<const int> tokens, int lang, int latent_dim) {
    uint64_t h = Rng::mix(seed, "text-noise");
    h = Rng::mix(h, static_cast<uint64_t>(lang) + 1);
    for (int tok : tokens) h = Rng::mix(h, static_cast<uint64_t>(tok) + 0x10001);
    Rng rng(h);
    std::vector<float> v(static_cast<size_t>(latent_dim));
    double norm_sq = 0.0;
    for (float& x : v) {
        x = rng.normal();
        norm_sq += static_cast<double>(x) * x;
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(std::max(norm_sq, 1e-30)));
    for (float& x : v) x *= inv;
    return Tensor::from({latent_dim}, std::move(v));
}

}  // namespace

Oracle Oracle::build(const WorldConfig& cfg) {
    cfg.validate();
    Oracle o;
    o.seed_ = cfg.seed;
    o.d_c_ = cfg.d_c;
    o.latent_dim_ = cfg.latent_dim;
    o.words_per_lang_ = cfg.vocab_per_lang;
    o.sigma_a_ = cfg.sigma_a;
    o.sigma_b_ = cfg.sigma_b;
    o.image_map_ = build_image_map(cfg.seed, cfg.d_c, cfg.latent_dim);

    const AttributeSpace space = AttributeSpace::build(cfg);
    const int vocab_size = Vocabulary::NUM_SPECIALS + 2 * cfg.vocab_per_lang;
    for (int lang = 0; lang < 2; ++lang) {
        std::vector<float> values(static_cast<size_t>(vocab_size) * cfg.latent_dim, 0.0f);
        const int base = Vocabulary::NUM_SPECIALS + lang * cfg.vocab_per_lang;
        for (int lex = 0; lex < cfg.vocab_per_lang; ++lex) {
            const auto& av = space.lexeme_vectors[static_cast<size_t>(lex)];
            float* row = values.data() + static_cast<size_t>(base + lex) * cfg.latent_dim;
            for (int i = 0; i < cfg.latent_dim; ++i) row[static_cast<size_t>(i)] = av[static_cast<size_t>(i)];
        }
        Tensor table = Tensor::from({vocab_size, cfg.latent_dim}, std::move(values));
        (lang == 0 ? o.table_a_ : o.table_b_) = table;
    }
    return o;
}

Oracle Oracle::restore(uint64_t seed, int d_c, int latent_dim, int words_per_lang,
                       float sigma_a, float sigma_b, Tensor image_map,
                       Tensor table_a, Tensor table_b) {
    Oracle o;
    o.seed_ = seed;
    o.d_c_ = d_c;
    o.latent_dim_ = latent_dim;
    o.words_per_lang_ = words_per_lang;
    o.sigma_a_ = sigma_a;
    o.sigma_b_ = sigma_b;
    o.image_map_ = std::move(image_map);
    o.table_a_ = std::move(table_a);
    o.table_b_ = std::move(table_b);
    return o;
}

OracleEmbedding Oracle::encode_image(std::span<const float> v) const {
    if (static_cast<int>(v.size()) != latent_dim_)
        throw TensorError("encode_image latent dimension mismatch");
    counters_->image.fetch_add(1, std::memory_order_relaxed);
    Tensor vc = Tensor::from({latent_dim_, 1}, {v.begin(), v.end()});
    Tensor proj = reshape(matmul(image_map_, vc), {d_c_});
    OracleEmbedding e;
    e.h = l2_normalize(proj);
    e.source = EmbeddingSource::Image;
    return e;
}

OracleEmbedding Oracle::encode_text(std::span<const int> tokens, int lang) const {
    if (lang != 0 && lang != 1) throw TensorError("encode_text language must be 0 or 1");
    const int vocab_size = Vocabulary::NUM_SPECIALS + 2 * words_per_lang_;
    const int base = Vocabulary::NUM_SPECIALS + lang * words_per_lang_;
    std::vector<int> content;
    for (int tok : tokens) {
        if (tok < 0 || tok >= vocab_size)
            throw TensorError("encode_text unknown token id " + std::to_string(tok));
        if (tok < Vocabulary::NUM_SPECIALS) continue;  // specials contribute nothing
        if (tok < base || tok >= base + words_per_lang_)
            throw TensorError("encode_text token " + std::to_string(tok) +
                              " does not belong to language " + std::to_string(lang));
        content.push_back(tok);
    }
    counters_->text.fetch_add(1, std::memory_order_relaxed);
    const Tensor& table = lang == 0 ? table_a_ : table_b_;
    Tensor concept_vec;
    if (content.empty()) {
        concept_vec = Tensor::zeros({latent_dim_});
    } else {
        Tensor rows = embedding(content, table);
        Tensor ones = Tensor::full({1, static_cast<int>(content.size())}, 1.0f);
        concept_vec = reshape(matmul(ones, rows), {latent_dim_});
    }
    Tensor unit = l2_normalize(concept_vec);
    const float s = sigma(lang);
    if (s > 0.0f) {
        Tensor eps = pseudo_noise(seed_, tokens, lang, latent_dim_);
        unit = add(unit, scale(eps, s));
    }
    Tensor proj = reshape(matmul(image_map_, reshape(unit, {latent_dim_, 1})), {d_c_});
    OracleEmbedding e;
    e.h = l2_normalize(proj);
    e.source = EmbeddingSource::Text;
    e.lang = lang;
    return e;
}

double Oracle::alignment_score(const Corpus& corpus, int lang) const {
    auto train = corpus.split(Split::Train);
    if (train.empty()) throw CorpusError("alignment_score: empty training split");
    double acc = 0.0;
    for (const Triplet* t : train) {
        OracleEmbedding img = encode_image(t->latent);
        OracleEmbedding txt = encode_text(corpus.caption(*t, lang), lang);
        double dot = 0.0;
        for (int i = 0; i < d_c_; ++i)
            dot += static_cast<double>(img.h.value(static_cast<size_t>(i))) *
                   txt.h.value(static_cast<size_t>(i));
        acc += dot;
    }
    return acc / static_cast<double>(train.size());
}

int Oracle::select_caption_language(const Corpus& corpus, int src_lang, int tgt_lang) const {
    const double src_score = alignment_score(corpus, src_lang);
    const double tgt_score = alignment_score(corpus, tgt_lang);
    if (std::fabs(src_score - tgt_score) < 1e-6) return src_lang;
    return src_score >= tgt_score ? src_lang : tgt_lang;
}

uint64_t Oracle::image_hash() const {
    uint64_t h = fnv1a64(&d_c_, sizeof(d_c_));
    h = fnv1a64(&latent_dim_, sizeof(latent_dim_), h);
    h = tensor_hash(image_map_, h);
    return h;
}

uint64_t Oracle::text_hash() const {
    uint64_t h = fnv1a64(&sigma_a_, sizeof(sigma_a_));
    h = fnv1a64(&sigma_b_, sizeof(sigma_b_), h);
    h = tensor_hash(table_a_, h);
    h = tensor_hash(table_b_, h);
    return h;
}

uint64_t Oracle::full_hash() const { return Rng::mix(image_hash(), text_hash()); }

void Oracle::set_text_trainable(bool on) {
    table_a_.set_requires_grad(on);
    table_b_.set_requires_grad(on);
}

}  // namespace prefixmt
