#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace prefixmt {

// Joint vocabulary over both languages. Specials sit at fixed low ids, then
// language A's words, then language B's. Word index i in A and word index i
// in B denote the same lexeme (the world's bijective lexicon).
class Vocabulary {
public:
    static constexpr int PAD = 0;
    static constexpr int START_SENT = 1;
    static constexpr int END_SENT = 2;
    static constexpr int MASK = 3;
    static constexpr int LANG_A = 4;
    static constexpr int LANG_B = 5;
    static constexpr int NUM_SPECIALS = 6;

    static Vocabulary build(int words_per_lang, uint64_t seed);

    int size() const { return static_cast<int>(tokens_.size()); }
    int words_per_lang() const { return words_per_lang_; }

    bool is_special(int id) const { return id >= 0 && id < NUM_SPECIALS; }
    int lang_base(int lang) const { return NUM_SPECIALS + lang * words_per_lang_; }
    int word_id(int lang, int lexeme) const;
    // language of a word id (0 or 1); -1 for specials
    int lang_of(int id) const;
    // lexeme index of a word id within its language
    int lexeme_of(int id) const;
    int lang_tag(int lang) const { return lang == 0 ? LANG_A : LANG_B; }
    // lexicon bijection: the same lexeme in the other language
    int translate_word(int id) const;

    const std::string& token_string(int id) const;
    int token_id(const std::string& token) const;  // throws on unknown token
    std::vector<int> tokenize(const std::string& text) const;
    std::string detokenize(std::span<const int> ids) const;

private:
    int words_per_lang_ = 0;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace prefixmt
