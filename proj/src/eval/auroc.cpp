#include "mmpkd/auroc.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mmpkd {

std::optional<double> auroc(std::span<const double> scores, std::span<const int> positive) {
    if (scores.size() != positive.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        std::size_t tie_pos = 0;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            if (positive[order[j]]) ++tie_pos;
            ++j;
        }
        // ranks i+1 .. j share the midrank
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        pos_rank_sum += midrank * static_cast<double>(tie_pos);
        n_pos += tie_pos;
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    const double np = static_cast<double>(n_pos);
    const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * static_cast<double>(n_neg));
}

}  // namespace mmpkd
