#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmpkd::stats {

struct Summary {
    double mean = 0.0;
    std::optional<double> std;  // sample std (n - 1); absent for a single value
    std::size_t n = 0;
};

// Independent of input order, bitwise.
Summary aggregate(std::span<const double> values);
std::string format_summary(const Summary& s, int decimals = 4);

// Alternative hypothesis about the first sample relative to the second.
enum class Alternative { TwoSided, Less, Greater };

struct MannWhitney {
    double u = 0.0;  // U of the first sample: pairs a > b, ties count 0.5
    double p = 1.0;
    bool exact = false;
};

inline constexpr std::size_t kExactLimit = 14;  // n + m at or below: full enumeration

MannWhitney mann_whitney_u(std::span<const double> a, std::span<const double> b,
                           Alternative alt = Alternative::TwoSided);

enum class Direction { HigherIsBetter, LowerIsBetter };

struct MetricSpec {
    std::string name;
    Direction direction = Direction::HigherIsBetter;
};

struct MetricComparison {
    std::string name;
    Direction direction = Direction::HigherIsBetter;
    Summary baseline;
    Summary mmpkd;
    MannWhitney test;  // first sample = baseline
    std::string marker;  // "", "*" or "**"
};

struct ComparisonReport {
    double alpha = 0.05;
    bool two_sided = true;
    std::vector<MetricComparison> rows;  // in MetricSpec order
};

// Both maps must carry exactly the metrics in `metrics`. With two_sided=false
// the alternative is "mmpkd better" in each metric's direction.
ComparisonReport compare_methods(const std::map<std::string, std::vector<double>>& baseline,
                                 const std::map<std::string, std::vector<double>>& mmpkd,
                                 const std::vector<MetricSpec>& metrics, double alpha = 0.05, bool two_sided = true);

std::string render_text(const ComparisonReport& r);
std::string render_csv(const ComparisonReport& r);

}  // namespace mmpkd::stats
