#include "prefixmt/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace prefixmt {

namespace {

constexpr int kMaxOrder = 4;

std::map<std::vector<int>, int> ngram_counts(const std::vector<int>& tokens, int n) {
    std::map<std::vector<int>, int> counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[std::vector<int>(tokens.begin() + static_cast<long>(i),
                                  tokens.begin() + static_cast<long>(i) + n)];
    return counts;
}

}  // namespace

double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references) {
    if (hypotheses.size() != references.size())
        throw BleuError("hypothesis/reference counts differ");
    if (hypotheses.empty()) throw BleuError("empty corpus");
    long long matches[kMaxOrder] = {0, 0, 0, 0};
    long long totals[kMaxOrder] = {0, 0, 0, 0};
    long long hyp_len = 0, ref_len = 0;
    for (size_t i = 0; i < hypotheses.size(); ++i) {
        const auto& hyp = hypotheses[i];
        const auto& ref = references[i];
        if (ref.empty()) throw BleuError("empty reference at index " + std::to_string(i));
        hyp_len += static_cast<long long>(hyp.size());
        ref_len += static_cast<long long>(ref.size());
        for (int n = 1; n <= kMaxOrder; ++n) {
            const auto hc = ngram_counts(hyp, n);
            const auto rc = ngram_counts(ref, n);
            for (const auto& [gram, count] : hc) {
                totals[n - 1] += count;
                auto it = rc.find(gram);
                if (it != rc.end()) matches[n - 1] += std::min(count, it->second);
            }
        }
    }
    double log_precision_sum = 0.0;
    for (int n = 0; n < kMaxOrder; ++n) {
        if (totals[n] == 0 || matches[n] == 0) return 0.0;
        log_precision_sum += std::log(static_cast<double>(matches[n]) /
                                      static_cast<double>(totals[n]));
    }
    if (hyp_len == 0) return 0.0;
    const double bp = hyp_len >= ref_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref_len) /
                                               static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_precision_sum / kMaxOrder);
}

}  // namespace prefixmt
