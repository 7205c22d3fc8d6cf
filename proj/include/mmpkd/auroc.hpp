#pragma once

#include <optional>
#include <span>

namespace mmpkd {

// Rank-based AUROC (Mann-Whitney form) with midranks for ties, so tied
// positive/negative pairs count 1/2. Returns nullopt when either class is
// absent. `positive[i]` != 0 marks a positive.
std::optional<double> auroc(std::span<const double> scores, std::span<const int> positive);

}  // namespace mmpkd
