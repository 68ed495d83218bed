#include "prefixmt/world.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "prefixmt/rng.hpp"

namespace prefixmt {

int WorldConfig::attribute_class(int lex) const {
    if (lex < n_objects) return 0;
    if (lex < n_objects + n_colors) return 1;
    if (lex < n_objects + n_colors + n_actions) return 2;
    return -1;
}

void WorldConfig::validate() const {
    if (n_objects <= 0 || n_colors <= 0 || n_actions <= 0 || n_dets <= 0 || n_advs <= 0)
        throw CorpusError("attribute inventory sizes must be positive");
    if (lexemes_needed() > vocab_per_lang)
        throw CorpusError("vocab too small for attribute inventory: need " +
                          std::to_string(lexemes_needed()) + ", have " +
                          std::to_string(vocab_per_lang));
    if (n_train <= 0 || n_valid <= 0 || n_test <= 0)
        throw CorpusError("corpus split sizes must be positive");
    if (latent_dim <= 0 || d_c <= 0) throw CorpusError("latent_dim and d_c must be positive");
    if (d_c < latent_dim)
        throw CorpusError("d_c must be >= latent_dim for the orthonormal image map");
    if (latent_dim < n_objects + n_colors + n_actions)
        throw CorpusError("latent_dim too small to orthogonalize the attribute inventory");
    if (sigma_a < 0.0f || sigma_b < 0.0f || latent_noise < 0.0f)
        throw CorpusError("noise levels must be nonnegative");
    if (n_concept_clusters <= 0) throw CorpusError("n_concept_clusters must be positive");
    if (static_cast<long long>(n_concept_clusters) >
        static_cast<long long>(n_objects) * n_colors * n_actions)
        throw CorpusError("n_concept_clusters exceeds the number of distinct attribute triples");
}

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "valid") return Split::Valid;
    if (name == "test") return Split::Test;
    throw CorpusError("unknown split name: " + name);
}

std::vector<const Triplet*> Corpus::split(Split s) const {
    std::vector<const Triplet*> out;
    for (const Triplet& t : records)
        if (t.split == s) out.push_back(&t);
    return out;
}

AttributeSpace AttributeSpace::build(const WorldConfig& cfg) {
    AttributeSpace space;
    space.latent_dim = cfg.latent_dim;
    space.lexeme_vectors.resize(static_cast<size_t>(cfg.vocab_per_lang));
    Rng rng(Rng::mix(cfg.seed, "attr-space"));
    const int n_attr = cfg.n_objects + cfg.n_colors + cfg.n_actions;
    // Gram-Schmidt in double: attribute directions come out exactly
    // orthonormal, everything past n_attr stays zero.
    std::vector<std::vector<double>> basis;
    basis.reserve(static_cast<size_t>(n_attr));
    for (int lex = 0; lex < n_attr; ++lex) {
        std::vector<double> v(static_cast<size_t>(cfg.latent_dim));
        for (double& x : v) x = rng.normal();
        for (const auto& p : basis) {
            double dot = 0.0;
            for (int i = 0; i < cfg.latent_dim; ++i) dot += v[static_cast<size_t>(i)] * p[static_cast<size_t>(i)];
            for (int i = 0; i < cfg.latent_dim; ++i) v[static_cast<size_t>(i)] -= dot * p[static_cast<size_t>(i)];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-9) throw CorpusError("degenerate attribute basis");
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    for (int lex = 0; lex < cfg.vocab_per_lang; ++lex) {
        auto& v = space.lexeme_vectors[static_cast<size_t>(lex)];
        v.assign(static_cast<size_t>(cfg.latent_dim), 0.0f);
        if (lex >= n_attr) continue;
        for (int i = 0; i < cfg.latent_dim; ++i)
            v[static_cast<size_t>(i)] = static_cast<float>(basis[static_cast<size_t>(lex)][static_cast<size_t>(i)]);
    }
    return space;
}

namespace {

struct TemplateSlots {
    // -3 det, -4 adv, 0/1/2 = color/object/action attribute classes
    std::vector<int> slots;
};

// four caption shapes; grounded positions are wherever an attribute lands
const TemplateSlots kTemplates[] = {
    {{-3, 1, 0, 2}},       // det color obj act
    {{1, 0, 2}},           // color obj act
    {{-3, 1, 0, 2, -4}},   // det color obj act adv
    {{0, 2, -4}},          // obj act adv
};

}  // namespace

Corpus generate_world(const WorldConfig& cfg) {
    cfg.validate();
    Corpus corpus;
    corpus.cfg = cfg;
    corpus.vocab = Vocabulary::build(cfg.vocab_per_lang, cfg.seed);
    const AttributeSpace space = AttributeSpace::build(cfg);

    // Each cluster is a full scene: a distinct attribute triple plus a fixed
    // surface form, so an image latent pins down its caption.
    Rng cluster_rng(Rng::mix(cfg.seed, "clusters"));
    struct Scene { int obj, color, act, det, adv, tpl; };
    std::vector<Scene> clusters(static_cast<size_t>(cfg.n_concept_clusters));
    std::unordered_set<int64_t> used_triples;
    for (auto& c : clusters) {
        for (;;) {
            c.obj = cluster_rng.uniform_int(cfg.n_objects);
            c.color = cluster_rng.uniform_int(cfg.n_colors);
            c.act = cluster_rng.uniform_int(cfg.n_actions);
            const int64_t key =
                (static_cast<int64_t>(c.obj) * cfg.n_colors + c.color) * cfg.n_actions + c.act;
            if (used_triples.insert(key).second) break;
        }
        c.det = cluster_rng.uniform_int(cfg.n_dets);
        c.adv = cluster_rng.uniform_int(cfg.n_advs);
        c.tpl = cluster_rng.uniform_int(4);
    }

    const int total = cfg.n_train + cfg.n_valid + cfg.n_test;
    const uint64_t rec_seed = Rng::mix(cfg.seed, "records");
    corpus.records.reserve(static_cast<size_t>(total));
    for (int id = 0; id < total; ++id) {
        Rng rng(Rng::mix(rec_seed, static_cast<uint64_t>(id)));
        Triplet t;
        t.id = id;
        t.split = id < cfg.n_train               ? Split::Train
                  : id < cfg.n_train + cfg.n_valid ? Split::Valid
                                                   : Split::Test;
        const Scene& cl = clusters[static_cast<size_t>(rng.uniform_int(cfg.n_concept_clusters))];
        const TemplateSlots& tpl = kTemplates[cl.tpl];

        std::vector<int> lexemes;
        for (size_t pos = 0; pos < tpl.slots.size(); ++pos) {
            int lex = -1;
            switch (tpl.slots[pos]) {
                case 0: lex = cfg.obj_lex(cl.obj); break;
                case 1: lex = cfg.color_lex(cl.color); break;
                case 2: lex = cfg.action_lex(cl.act); break;
                case -3: lex = cfg.det_lex(cl.det); break;
                case -4: lex = cfg.adv_lex(cl.adv); break;
            }
            lexemes.push_back(lex);
            if (cfg.is_attribute_lexeme(lex)) t.grounded.push_back(static_cast<int>(pos));
        }
        for (int lex : lexemes) {
            t.caption_a.push_back(corpus.vocab.word_id(0, lex));
            t.caption_b.push_back(corpus.vocab.word_id(1, lex));
        }

        t.latent.assign(static_cast<size_t>(cfg.latent_dim), 0.0f);
        for (int lex : lexemes) {
            if (!cfg.is_attribute_lexeme(lex)) continue;
            const auto& av = space.lexeme_vectors[static_cast<size_t>(lex)];
            for (int i = 0; i < cfg.latent_dim; ++i) t.latent[static_cast<size_t>(i)] += av[static_cast<size_t>(i)];
        }
        if (cfg.latent_noise > 0.0f) {
            for (float& x : t.latent) x += cfg.latent_noise * rng.normal();
        }
        corpus.records.push_back(std::move(t));
    }
    return corpus;
}

std::vector<int> noise_tokens(std::span<const int> seq, double p, uint64_t seed,
                              NoiseMode mode, const Vocabulary& vocab) {
    if (p < 0.0 || p > 1.0) throw CorpusError("noise probability must lie in [0, 1]");
    Rng rng(Rng::mix(seed, "noise"));
    std::vector<int> out;
    out.reserve(seq.size());
    for (int tok : seq) {
        if (vocab.is_special(tok)) {
            out.push_back(tok);
            continue;
        }
        const bool hit = rng.bernoulli(p);
        if (!hit) {
            out.push_back(tok);
        } else if (mode == NoiseMode::Mask) {
            out.push_back(Vocabulary::MASK);
        }
        // Drop: token removed
    }
    return out;
}

namespace {

void append_float(std::string& out, float v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::string& path) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CorpusError("cannot open for writing: " + path);
    std::string line;
    for (const Triplet& t : corpus.records) {
        line.clear();
        line += "{\"id\":" + std::to_string(t.id);
        line += ",\"split\":\"";
        line += split_name(t.split);
        line += "\",\"latent\":[";
        for (size_t i = 0; i < t.latent.size(); ++i) {
            if (i) line += ',';
            append_float(line, t.latent[i]);
        }
        line += "],\"caption_a\":\"" + corpus.vocab.detokenize(t.caption_a);
        line += "\",\"caption_b\":\"" + corpus.vocab.detokenize(t.caption_b);
        line += "\",\"grounded\":[";
        for (size_t i = 0; i < t.grounded.size(); ++i) {
            if (i) line += ',';
            line += std::to_string(t.grounded[i]);
        }
        line += "]}\n";
        os << line;
    }
    if (!os) throw CorpusError("write failed: " + path);
}

Corpus read_corpus(const std::string& path, const WorldConfig& cfg) {
    cfg.validate();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CorpusError("cannot open corpus file: " + path);
    Corpus corpus;
    corpus.cfg = cfg;
    corpus.vocab = Vocabulary::build(cfg.vocab_per_lang, cfg.seed);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError("malformed corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            Triplet t;
            t.id = j.at("id").get<int>();
            t.split = split_from_name(j.at("split").get<std::string>());
            t.latent = j.at("latent").get<std::vector<float>>();
            t.caption_a = corpus.vocab.tokenize(j.at("caption_a").get<std::string>());
            t.caption_b = corpus.vocab.tokenize(j.at("caption_b").get<std::string>());
            t.grounded = j.at("grounded").get<std::vector<int>>();
            if (static_cast<int>(t.latent.size()) != cfg.latent_dim)
                throw CorpusError("latent dimension mismatch");
            if (t.caption_a.size() != t.caption_b.size())
                throw CorpusError("caption length mismatch");
            for (int g : t.grounded)
                if (g < 0 || g >= static_cast<int>(t.caption_a.size()))
                    throw CorpusError("grounded index out of range");
            corpus.records.push_back(std::move(t));
        } catch (const CorpusError&) {
            throw;
        } catch (const std::exception& e) {
            throw CorpusError("malformed corpus line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (corpus.records.empty()) throw CorpusError("empty corpus file: " + path);
    return corpus;
}

std::vector<int> trivial_source() {
    return {Vocabulary::START_SENT, Vocabulary::END_SENT};
}

std::vector<int> frame_sentence(std::span<const int> content, int lang, const Vocabulary& vocab) {
    std::vector<int> out;
    out.reserve(content.size() + 2);
    out.push_back(vocab.lang_tag(lang));
    out.insert(out.end(), content.begin(), content.end());
    out.push_back(Vocabulary::END_SENT);
    return out;
}

std::vector<Batch> make_batches(const Corpus& corpus, Split split, int batch_size,
                                uint64_t seed, int epoch, TaskKind task, int caption_lang) {
    if (batch_size < 1) throw CorpusError("batch_size must be >= 1");
    auto records = corpus.split(split);
    if (records.empty()) throw CorpusError("empty split");
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::mix(Rng::mix(seed, "shuffle"), static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(i)));
        std::swap(order[i - 1], order[j]);
    }
    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        Batch b;
        b.task = task;
        b.caption_lang = caption_lang;
        const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        for (size_t i = start; i < end; ++i) b.records.push_back(records[order[i]]);
        batches.push_back(std::move(b));
    }
    return batches;
}

std::vector<std::vector<int>> pad_sequences(const std::vector<std::vector<int>>& rows, int pad_id) {
    size_t width = 0;
    for (const auto& r : rows) width = std::max(width, r.size());
    std::vector<std::vector<int>> out(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        out[i] = rows[i];
        out[i].resize(width, pad_id);
    }
    return out;
}

}  // namespace prefixmt
