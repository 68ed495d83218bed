#include "prefixmt/vocab.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "prefixmt/rng.hpp"

namespace prefixmt {

namespace {

// Disjoint syllable inventories so the two languages never collide on a
// surface form.
const char* kSyllablesA[] = {"ka", "to", "mi", "ru", "sa", "ne", "po", "li", "va", "du"};
const char* kSyllablesB[] = {"or", "en", "ba", "ji", "ul", "fe", "gar", "ix", "oz", "eth"};

std::string make_word(Rng& rng, int lang) {
    const int n_syl = 2 + rng.uniform_int(2);
    std::string w;
    for (int s = 0; s < n_syl; ++s) {
        if (lang == 0)
            w += kSyllablesA[rng.uniform_int(10)];
        else
            w += kSyllablesB[rng.uniform_int(10)];
    }
    return w;
}

}  // namespace

Vocabulary Vocabulary::build(int words_per_lang, uint64_t seed) {
    if (words_per_lang <= 0) throw std::invalid_argument("words_per_lang must be positive");
    Vocabulary v;
    v.words_per_lang_ = words_per_lang;
    v.tokens_ = {"<pad>", "<s>", "</s>", "<mask>", "<lang_a>", "<lang_b>"};
    Rng rng(Rng::mix(seed, "vocab"));
    std::unordered_set<std::string> seen(v.tokens_.begin(), v.tokens_.end());
    for (int lang = 0; lang < 2; ++lang) {
        for (int i = 0; i < words_per_lang; ++i) {
            std::string w = make_word(rng, lang);
            while (seen.count(w)) w = make_word(rng, lang);
            seen.insert(w);
            v.tokens_.push_back(std::move(w));
        }
    }
    for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i) v.ids_[v.tokens_[i]] = i;
    return v;
}

int Vocabulary::word_id(int lang, int lexeme) const {
    if (lexeme < 0 || lexeme >= words_per_lang_)
        throw std::out_of_range("lexeme index out of range");
    return lang_base(lang) + lexeme;
}

int Vocabulary::lang_of(int id) const {
    if (id < NUM_SPECIALS) return -1;
    return (id - NUM_SPECIALS) / words_per_lang_;
}

int Vocabulary::lexeme_of(int id) const {
    if (id < NUM_SPECIALS || id >= size()) throw std::out_of_range("not a word id");
    return (id - NUM_SPECIALS) % words_per_lang_;
}

int Vocabulary::translate_word(int id) const {
    const int lang = lang_of(id);
    if (lang < 0) return id;
    return word_id(1 - lang, lexeme_of(id));
}

const std::string& Vocabulary::token_string(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
    return tokens_[static_cast<size_t>(id)];
}

int Vocabulary::token_id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw std::runtime_error("unknown token: " + token);
    return it->second;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
    std::vector<int> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) out.push_back(token_id(tok));
    return out;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token_string(ids[i]);
    }
    return out;
}

}  // namespace prefixmt
