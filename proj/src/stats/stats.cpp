#include "mmpkd/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <stdexcept>

namespace mmpkd::stats {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

}  // namespace

Summary aggregate(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("aggregate: no values");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    Summary s;
    s.n = v.size();
    const double n = static_cast<double>(v.size());
    if (v.front() == v.back()) {
        s.mean = v.front();
        if (v.size() > 1) s.std = 0.0;
        return s;
    }
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    // one correction pass against summation rounding
    double resid = 0.0;
    for (double x : v) resid += x - mean;
    mean += resid / n;
    s.mean = mean;
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        s.std = std::sqrt(ss / (n - 1.0));
    }
    return s;
}

std::string format_summary(const Summary& s, int decimals) {
    return fixed(s.mean, decimals) + " ± " + (s.std ? fixed(*s.std, decimals) : std::string("n/a"));
}

namespace {

// Midranks of the pooled sample, doubled so they are integers.
std::vector<long> doubled_midranks(const std::vector<double>& pooled, long& tie_term) {
    const std::size_t N = pooled.size();
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return pooled[x] < pooled[y]; });
    std::vector<long> r2(N);
    tie_term = 0;
    for (std::size_t i = 0; i < N;) {
        std::size_t j = i;
        while (j + 1 < N && pooled[idx[j + 1]] == pooled[idx[i]]) ++j;
        // ranks i+1 .. j+1, doubled midrank = i + j + 2
        for (std::size_t k = i; k <= j; ++k) r2[idx[k]] = static_cast<long>(i + j + 2);
        const long t = static_cast<long>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    return r2;
}

// Enumerate every n-subset of the pooled ranks; count how often the
// doubled U lands at or beyond the observed one.
struct Tally {
    long total = 0, le = 0, ge = 0, extreme = 0;
};

void enumerate(const std::vector<long>& r2, std::size_t n, std::size_t start, std::size_t picked, long sum2,
               long offset2, long u2_obs, long center2, long dev_obs, Tally& t) {
    if (picked == n) {
        const long u2 = sum2 - offset2;
        ++t.total;
        if (u2 <= u2_obs) ++t.le;
        if (u2 >= u2_obs) ++t.ge;
        if (std::labs(2 * u2 - center2) >= dev_obs) ++t.extreme;
        return;
    }
    for (std::size_t i = start; i + (n - picked) <= r2.size(); ++i)
        enumerate(r2, n, i + 1, picked + 1, sum2 + r2[i], offset2, u2_obs, center2, dev_obs, t);
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

MannWhitney mann_whitney_u(std::span<const double> a, std::span<const double> b, Alternative alt) {
    if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: both samples must be non-empty");
    for (double v : a)
        if (!std::isfinite(v)) throw std::invalid_argument("mann_whitney_u: non-finite value");
    for (double v : b)
        if (!std::isfinite(v)) throw std::invalid_argument("mann_whitney_u: non-finite value");

    const std::size_t n = a.size(), m = b.size(), N = n + m;
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    long tie_term = 0;
    const auto r2 = doubled_midranks(pooled, tie_term);
    long ra2 = 0;
    for (std::size_t i = 0; i < n; ++i) ra2 += r2[i];
    const long offset2 = static_cast<long>(n * (n + 1));  // 2 * n(n+1)/2
    const long u2 = ra2 - offset2;

    MannWhitney out;
    out.u = static_cast<double>(u2) / 2.0;
    const long nm = static_cast<long>(n * m);

    if (N <= kExactLimit) {
        out.exact = true;
        Tally t;
        // compare 2*(2U) - 2nm against the observed deviation, all in integers
        const long dev_obs = std::labs(2 * u2 - 2 * nm);
        std::vector<long> sorted = r2;
        enumerate(sorted, n, 0, 0, 0, offset2, u2, 2 * nm, dev_obs, t);
        const double total = static_cast<double>(t.total);
        switch (alt) {
            case Alternative::TwoSided: out.p = static_cast<double>(t.extreme) / total; break;
            case Alternative::Less: out.p = static_cast<double>(t.le) / total; break;
            case Alternative::Greater: out.p = static_cast<double>(t.ge) / total; break;
        }
        return out;
    }

    const double mu = static_cast<double>(nm) / 2.0;
    const double Nd = static_cast<double>(N);
    const double var = static_cast<double>(nm) / 12.0 *
                       ((Nd + 1.0) - static_cast<double>(tie_term) / (Nd * (Nd - 1.0)));
    if (!(var > 0.0)) {
        out.p = 1.0;
        return out;
    }
    const double sd = std::sqrt(var);
    switch (alt) {
        case Alternative::TwoSided: {
            const double z = std::max(0.0, std::abs(out.u - mu) - 0.5) / sd;
            out.p = std::min(1.0, 2.0 * normal_sf(z));
            break;
        }
        case Alternative::Greater: out.p = normal_sf((out.u - mu - 0.5) / sd); break;
        case Alternative::Less: out.p = 1.0 - normal_sf((out.u - mu + 0.5) / sd); break;
    }
    return out;
}

ComparisonReport compare_methods(const std::map<std::string, std::vector<double>>& baseline,
                                 const std::map<std::string, std::vector<double>>& mmpkd,
                                 const std::vector<MetricSpec>& metrics, double alpha, bool two_sided) {
    std::set<std::string> wanted;
    for (const auto& m : metrics) wanted.insert(m.name);
    auto keys = [](const auto& mp) {
        std::set<std::string> k;
        for (const auto& [name, _] : mp) k.insert(name);
        return k;
    };
    if (wanted.size() != metrics.size()) throw std::invalid_argument("compare_methods: duplicate metric names");
    if (keys(baseline) != wanted || keys(mmpkd) != wanted) {
        throw std::invalid_argument("compare_methods: baseline and mmpkd metric sets differ from the declared metrics");
    }
    ComparisonReport r;
    r.alpha = alpha;
    r.two_sided = two_sided;
    for (const auto& spec : metrics) {
        const auto& b = baseline.at(spec.name);
        const auto& m = mmpkd.at(spec.name);
        MetricComparison row;
        row.name = spec.name;
        row.direction = spec.direction;
        row.baseline = aggregate(b);
        row.mmpkd = aggregate(m);
        const bool higher = spec.direction == Direction::HigherIsBetter;
        const Alternative alt = two_sided ? Alternative::TwoSided : (higher ? Alternative::Less : Alternative::Greater);
        row.test = mann_whitney_u(b, m, alt);
        const bool improved = higher ? row.mmpkd.mean > row.baseline.mean : row.mmpkd.mean < row.baseline.mean;
        row.marker = !improved ? "" : row.test.p < alpha ? "**" : "*";
        r.rows.push_back(std::move(row));
    }
    return r;
}

std::string render_text(const ComparisonReport& r) {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> head{"method"};
    std::vector<std::string> base{"baseline"}, mm{"mmpkd"}, u{"U"}, p{"p"};
    for (const auto& row : r.rows) {
        head.push_back(row.name + (row.direction == Direction::HigherIsBetter ? " (+)" : " (-)"));
        base.push_back(format_summary(row.baseline));
        mm.push_back(format_summary(row.mmpkd) + row.marker);
        u.push_back(fmt("%.1f", row.test.u));
        p.push_back(fmt("%.4f", row.test.p) + (row.test.exact ? " exact" : " approx"));
    }
    cells = {head, base, mm, u, p};
    // width in code points; "±" is two bytes
    auto width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char c : s) w += (c & 0xC0) != 0x80;
        return w;
    };
    std::vector<std::size_t> widths(head.size(), 0);
    for (const auto& line : cells)
        for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], width(line[i]));
    std::string out;
    for (const auto& line : cells) {
        std::string l;
        for (std::size_t i = 0; i < line.size(); ++i) {
            l += line[i];
            if (i + 1 < line.size()) l += std::string(widths[i] - width(line[i]) + 2, ' ');
        }
        out += l + "\n";
    }
    out += "\n(+) higher is better, (-) lower is better. * improvement over baseline, ** improvement with p < " +
           fmt("%g", r.alpha) + " (Mann-Whitney U, " + (r.two_sided ? "two-sided" : "one-sided") + ").\n";
    return out;
}

std::string render_csv(const ComparisonReport& r) {
    std::string out =
        "metric,direction,baseline_mean,baseline_std,baseline_n,mmpkd_mean,mmpkd_std,mmpkd_n,u,p,exact,marker\n";
    auto opt = [](const std::optional<double>& v) { return v ? fmt("%.17g", *v) : std::string(); };
    for (const auto& row : r.rows) {
        out += row.name + "," + (row.direction == Direction::HigherIsBetter ? "higher" : "lower") + "," +
               fmt("%.17g", row.baseline.mean) + "," + opt(row.baseline.std) + "," + std::to_string(row.baseline.n) +
               "," + fmt("%.17g", row.mmpkd.mean) + "," + opt(row.mmpkd.std) + "," + std::to_string(row.mmpkd.n) +
               "," + fmt("%.17g", row.test.u) + "," + fmt("%.17g", row.test.p) + "," +
               (row.test.exact ? "1" : "0") + "," + row.marker + "\n";
    }
    return out;
}

}  // namespace mmpkd::stats
