#pragma once

#include <stdexcept>
#include <vector>

namespace prefixmt {

class BleuError : public std::runtime_error {
public:
    explicit BleuError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corpus-level BLEU-4 over whitespace-free token id sequences: geometric
// mean of clipped 1..4-gram modified precisions times the brevity penalty,
// no smoothing, exactly zero when any n-gram precision is zero. One
// reference per hypothesis.
double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references);

}  // namespace prefixmt
