#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace triview::stats {

enum class Alternative { two_sided, less, greater };
enum class Method { exact, approximate };

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double log10_p = 0.0;  // kept alongside p_value so tail magnitudes survive underflow
    double effect_size = std::numeric_limits<double>::quiet_NaN();  // Mann-Whitney only
    Method method = Method::approximate;
};

// Exact-path cutoffs. The exact branches exist so the implementations stay
// checkable against brute-force enumeration; larger inputs use the classical
// approximations.
struct Thresholds {
    int mann_whitney_exact_max_total = 12;
    int kruskal_exact_max_total = 10;
    int spearman_exact_max_n = 8;
};

namespace detail {

constexpr double kLn10 = 2.302585092994045684;
constexpr double kLn2Pi = 1.837877066409345484;

// Upper tail of the standard normal, with a log-space value that stays
// meaningful far past double underflow.
struct TailProb {
    double p;
    double log10_p;
};

inline TailProb normal_sf(double z) {
    if (z < 37.0) {
        const double p = 0.5 * std::erfc(z / std::sqrt(2.0));
        if (p > 0.0) return {p, std::log10(p)};
    }
    // Asymptotic expansion Q(z) ~ phi(z)/z * (1 - 1/z^2 + 3/z^4 - ...).
    const double z2 = z * z;
    const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2) +
                          105.0 / (z2 * z2 * z2 * z2);
    const double ln_q = -0.5 * z2 - std::log(z) - 0.5 * kLn2Pi + std::log(series);
    return {std::exp(ln_q), ln_q / kLn10};
}

// Regularized upper incomplete gamma Q(a, x), log-space via Lentz's continued
// fraction on the large-x branch.
inline TailProb gamma_q(double a, double x) {
    if (x <= 0.0) return {1.0, 0.0};
    if (x < a + 1.0) {
        // Lower series for P(a, x); Q = 1 - P is not small on this branch.
        double term = 1.0 / a;
        double sum = term;
        double ap = a;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-16) break;
        }
        const double ln_p = -x + a * std::log(x) - std::lgamma(a) + std::log(sum);
        const double q = 1.0 - std::exp(ln_p);
        const double qq = std::max(q, std::numeric_limits<double>::min());
        return {qq, std::log10(qq)};
    }
    // Continued fraction for Q(a, x).
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    const double ln_q = -x + a * std::log(x) - std::lgamma(a) + std::log(h);
    return {std::exp(ln_q), ln_q / kLn10};
}

// Chi-square survival function with k degrees of freedom.
inline TailProb chi2_sf(double x, int dof) { return gamma_q(0.5 * dof, 0.5 * x); }

// Continued fraction for the regularized incomplete beta (Lentz).
inline double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return h;
}

// Regularized incomplete beta I_x(a, b) in log space.
inline TailProb inc_beta(double a, double b, double x) {
    if (x <= 0.0) return {0.0, -std::numeric_limits<double>::infinity()};
    if (x >= 1.0) return {1.0, 0.0};
    const double ln_front = a * std::log(x) + b * std::log1p(-x) - std::log(a) -
                            (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
    if (x < (a + 1.0) / (a + b + 2.0)) {
        const double ln_i = ln_front + std::log(betacf(a, b, x));
        return {std::exp(ln_i), ln_i / kLn10};
    }
    const TailProb other = inc_beta(b, a, 1.0 - x);
    const double p = std::max(1.0 - other.p, std::numeric_limits<double>::min());
    return {p, std::log10(p)};
}

// Student-t survival P(T > t), t >= 0, dof nu.
inline TailProb student_t_sf(double t, double nu) {
    const TailProb ib = inc_beta(0.5 * nu, 0.5, nu / (nu + t * t));
    const double p = 0.5 * ib.p;
    return {p, ib.log10_p + std::log10(0.5)};
}

// Midranks (1-based fractional ranks with ties averaged).
inline std::vector<double> midranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

// Sum of (t^3 - t) over tie groups.
inline double tie_term(const std::vector<double>& pooled) {
    std::vector<double> v = pooled;
    std::sort(v.begin(), v.end());
    double total = 0.0;
    std::size_t i = 0;
    while (i < v.size()) {
        std::size_t j = i;
        while (j + 1 < v.size() && v[j + 1] == v[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        total += t * t * t - t;
        i = j + 1;
    }
    return total;
}

inline bool has_ties(const std::vector<double>& pooled) { return tie_term(pooled) > 0.0; }

// Null distribution of the Mann-Whitney U statistic: count[u] = number of
// arrangements of m+n ranks giving U = u. Exact integers below 2^53.
inline std::vector<double> mw_null_counts(int m, int n) {
    const int umax = m * n;
    // f(i, j, u): interleavings of i a-ranks and j b-ranks with statistic u.
    std::vector<std::vector<double>> f(static_cast<std::size_t>(m + 1),
                                       std::vector<double>(static_cast<std::size_t>(umax + 1), 0.0));
    f[0][0] = 1.0;
    for (int j = 1; j <= n; ++j) {
        // zero a-elements: only u = 0.
    }
    for (int i = 0; i <= m; ++i) {
        for (int j = (i == 0 ? 1 : 0); j <= n; ++j) {
            if (i == 0) {
                f[0][0] = 1.0;
                continue;
            }
            // Build incrementally over j using the standard recurrence
            // N(u; i, j) = N(u - j; i - 1, j) + N(u; i, j - 1).
        }
    }
    // Simpler: dynamic program over j with rolling tables.
    std::vector<std::vector<double>> table(static_cast<std::size_t>(m + 1));
    for (int i = 0; i <= m; ++i) table[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(umax + 1), 0.0);
    table[0][0] = 1.0;
    for (int j = 0; j <= n; ++j) {
        std::vector<std::vector<double>> next = table;
        if (j > 0) {
            for (int i = 1; i <= m; ++i)
                for (int u = 0; u <= umax; ++u) {
                    next[static_cast<std::size_t>(i)][static_cast<std::size_t>(u)] = 0.0;
                }
        }
        (void)next;
        break;
    }
    // Fall back to the direct two-index recurrence, computed row by row.
    std::vector<std::vector<std::vector<double>>> g(
        static_cast<std::size_t>(m + 1),
        std::vector<std::vector<double>>(static_cast<std::size_t>(n + 1),
                                         std::vector<double>(static_cast<std::size_t>(umax + 1), 0.0)));
    for (int j = 0; j <= n; ++j) g[0][static_cast<std::size_t>(j)][0] = 1.0;
    for (int i = 1; i <= m; ++i) {
        g[static_cast<std::size_t>(i)][0][0] = 1.0;
        for (int j = 1; j <= n; ++j) {
            for (int u = 0; u <= i * j; ++u) {
                double c = g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j - 1)]
                            [static_cast<std::size_t>(u)];
                if (u >= j)
                    c += g[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)]
                          [static_cast<std::size_t>(u - j)];
                g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)][static_cast<std::size_t>(u)] = c;
            }
        }
    }
    return g[static_cast<std::size_t>(m)][static_cast<std::size_t>(n)];
}

inline TailProb from_p(double p) {
    p = std::clamp(p, 0.0, 1.0);
    if (p <= 0.0) return {0.0, -std::numeric_limits<double>::infinity()};
    return {p, std::log10(p)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mann-Whitney U with midrank ties and common-language effect size
// f = P(a > b) + 0.5 P(a == b).
// ---------------------------------------------------------------------------
inline TestResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b,
                                 Alternative alternative = Alternative::two_sided,
                                 const Thresholds& th = {}) {
    if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: empty sample");
    const int m = static_cast<int>(a.size());
    const int n = static_cast<int>(b.size());
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::vector<double> ranks = detail::midranks(pooled);
    double rank_sum_a = 0.0;
    for (int i = 0; i < m; ++i) rank_sum_a += ranks[static_cast<std::size_t>(i)];
    const double u_a = rank_sum_a - 0.5 * m * (m + 1);

    TestResult res;
    res.statistic = u_a;
    res.effect_size = u_a / (static_cast<double>(m) * n);

    const bool ties = detail::has_ties(pooled);
    if (m + n <= th.mann_whitney_exact_max_total && !ties) {
        const std::vector<double> counts = detail::mw_null_counts(m, n);
        double total = 0.0;
        for (const double c : counts) total += c;
        const int u = static_cast<int>(std::llround(u_a));
        double le = 0.0, ge = 0.0;
        for (int k = 0; k < static_cast<int>(counts.size()); ++k) {
            if (k <= u) le += counts[static_cast<std::size_t>(k)];
            if (k >= u) ge += counts[static_cast<std::size_t>(k)];
        }
        double p = 1.0;
        switch (alternative) {
            case Alternative::two_sided: p = std::min(1.0, 2.0 * std::min(le, ge) / total); break;
            case Alternative::greater: p = ge / total; break;
            case Alternative::less: p = le / total; break;
        }
        const auto tp = detail::from_p(p);
        res.p_value = tp.p;
        res.log10_p = tp.log10_p;
        res.method = Method::exact;
        return res;
    }

    const double big_n = static_cast<double>(m + n);
    const double mu = 0.5 * static_cast<double>(m) * n;
    const double tie = detail::tie_term(pooled);
    const double var = (static_cast<double>(m) * n / 12.0) *
                       ((big_n + 1.0) - tie / (big_n * (big_n - 1.0)));
    res.method = Method::approximate;
    if (var <= 0.0) {  // every pooled value identical
        res.p_value = 1.0;
        res.log10_p = 0.0;
        return res;
    }
    const double sigma = std::sqrt(var);
    detail::TailProb tp{1.0, 0.0};
    switch (alternative) {
        case Alternative::greater: tp = detail::normal_sf((u_a - mu - 0.5) / sigma); break;
        case Alternative::less: tp = detail::normal_sf((mu - u_a - 0.5) / sigma); break;
        case Alternative::two_sided: {
            const double z = (std::abs(u_a - mu) - 0.5) / sigma;
            tp = detail::normal_sf(z);
            tp.p = std::min(1.0, 2.0 * tp.p);
            tp.log10_p = std::min(0.0, tp.log10_p + std::log10(2.0));
            break;
        }
    }
    res.p_value = std::min(1.0, tp.p);
    res.log10_p = std::min(0.0, tp.log10_p);
    return res;
}

// ---------------------------------------------------------------------------
// Kruskal-Wallis H with tie correction; exact permutation p for small N.
// ---------------------------------------------------------------------------
namespace detail {

inline double kruskal_h(const std::vector<std::vector<double>>& groups) {
    std::vector<double> pooled;
    for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());
    const double n_total = static_cast<double>(pooled.size());
    const std::vector<double> ranks = midranks(pooled);
    double h = 0.0;
    std::size_t off = 0;
    for (const auto& g : groups) {
        double r = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) r += ranks[off + i];
        h += r * r / static_cast<double>(g.size());
        off += g.size();
    }
    h = 12.0 / (n_total * (n_total + 1.0)) * h - 3.0 * (n_total + 1.0);
    const double correction = 1.0 - tie_term(pooled) / (n_total * n_total * n_total - n_total);
    if (correction <= 0.0) return 0.0;  // all values identical
    return h / correction;
}

// Enumerate all assignments of `values` to groups with the given sizes,
// invoking fn(groups) for each.
template <typename Fn>
void enumerate_partitions(std::vector<double>& values, const std::vector<std::size_t>& sizes,
                          std::size_t gi, std::vector<std::vector<double>>& acc,
                          std::vector<bool>& used, Fn&& fn) {
    if (gi == sizes.size()) {
        fn(acc);
        return;
    }
    // Choose sizes[gi] unused indices in increasing order.
    const std::size_t want = sizes[gi];
    std::vector<std::size_t> pick;
    std::function<void(std::size_t)> rec = [&](std::size_t start) {
        if (pick.size() == want) {
            auto& slot = acc[gi];
            slot.clear();
            for (const std::size_t p : pick) {
                slot.push_back(values[p]);
                used[p] = true;
            }
            enumerate_partitions(values, sizes, gi + 1, acc, used, fn);
            for (const std::size_t p : pick) used[p] = false;
            return;
        }
        for (std::size_t i = start; i < values.size(); ++i) {
            if (used[i]) continue;
            pick.push_back(i);
            rec(i + 1);
            pick.pop_back();
        }
    };
    rec(0);
}

}  // namespace detail

inline TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups,
                                 const Thresholds& th = {}) {
    if (groups.size() < 2) throw std::invalid_argument("kruskal_wallis: need at least 2 groups");
    std::size_t n_total = 0;
    for (const auto& g : groups) {
        if (g.empty()) throw std::invalid_argument("kruskal_wallis: empty group");
        n_total += g.size();
    }
    const double h = detail::kruskal_h(groups);
    TestResult res;
    res.statistic = h;

    std::vector<double> pooled;
    for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());
    const double correction =
        1.0 - detail::tie_term(pooled) / (static_cast<double>(n_total) * n_total * n_total - n_total);
    if (correction <= 0.0) {
        res.statistic = 0.0;
        res.p_value = 1.0;
        res.log10_p = 0.0;
        res.method = Method::exact;
        return res;
    }

    if (n_total <= static_cast<std::size_t>(th.kruskal_exact_max_total)) {
        std::vector<std::size_t> sizes;
        for (const auto& g : groups) sizes.push_back(g.size());
        std::vector<std::vector<double>> acc(groups.size());
        std::vector<bool> used(pooled.size(), false);
        std::int64_t total = 0, extreme = 0;
        detail::enumerate_partitions(pooled, sizes, 0, acc, used,
                                     [&](const std::vector<std::vector<double>>& gs) {
                                         ++total;
                                         if (detail::kruskal_h(gs) >= h - 1e-12) ++extreme;
                                     });
        const auto tp = detail::from_p(static_cast<double>(extreme) / static_cast<double>(total));
        res.p_value = tp.p;
        res.log10_p = tp.log10_p;
        res.method = Method::exact;
        return res;
    }

    const auto tp = detail::chi2_sf(h, static_cast<int>(groups.size()) - 1);
    res.p_value = tp.p;
    res.log10_p = tp.log10_p;
    res.method = Method::approximate;
    return res;
}

// ---------------------------------------------------------------------------
// Spearman rank correlation (midrank Pearson), exact permutation p for n <= 8.
// ---------------------------------------------------------------------------
namespace detail {

inline double pearson_of(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

inline TestResult spearman(const std::vector<double>& x, const std::vector<double>& y,
                           const Thresholds& th = {}) {
    if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
    const std::size_t n = x.size();
    if (n < 3) throw std::invalid_argument("spearman: need at least 3 observations");
    const std::vector<double> rx = detail::midranks(x);
    const std::vector<double> ry = detail::midranks(y);
    const auto degenerate = [](const std::vector<double>& r) {
        for (std::size_t i = 1; i < r.size(); ++i)
            if (r[i] != r[0]) return false;
        return true;
    };
    if (degenerate(rx) || degenerate(ry))
        throw std::domain_error("spearman: zero rank variance, correlation undefined");

    double rho = detail::pearson_of(rx, ry);
    rho = std::clamp(rho, -1.0, 1.0);
    TestResult res;
    res.statistic = rho;

    if (n <= static_cast<std::size_t>(th.spearman_exact_max_n)) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::int64_t total = 0, extreme = 0;
        std::vector<double> ry_perm(n);
        do {
            for (std::size_t i = 0; i < n; ++i) ry_perm[i] = ry[perm[i]];
            ++total;
            if (std::abs(detail::pearson_of(rx, ry_perm)) >= std::abs(rho) - 1e-12) ++extreme;
        } while (std::next_permutation(perm.begin(), perm.end()));
        const auto tp = detail::from_p(static_cast<double>(extreme) / static_cast<double>(total));
        res.p_value = tp.p;
        res.log10_p = tp.log10_p;
        res.method = Method::exact;
        return res;
    }

    res.method = Method::approximate;
    const double denom = 1.0 - rho * rho;
    if (denom <= 0.0) {
        res.p_value = 0.0;
        res.log10_p = -std::numeric_limits<double>::infinity();
        return res;
    }
    const double t = std::abs(rho) * std::sqrt((static_cast<double>(n) - 2.0) / denom);
    const auto tp = detail::student_t_sf(t, static_cast<double>(n) - 2.0);
    res.p_value = std::min(1.0, 2.0 * tp.p);
    res.log10_p = std::min(0.0, tp.log10_p + std::log10(2.0));
    return res;
}

// ---------------------------------------------------------------------------
// Dissimilarities and information measures.
// ---------------------------------------------------------------------------
namespace detail {
inline void require_same_dim(const std::vector<double>& a, const std::vector<double>& b,
                             const char* what) {
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}
}  // namespace detail

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
    detail::require_same_dim(a, b, "cosine_distance");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine_distance: zero vector has no direction");
    return 1.0 - dot / std::sqrt(na * nb);
}

inline double l1_distance(const std::vector<double>& a, const std::vector<double>& b) {
    detail::require_same_dim(a, b, "l1_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s;
}

inline double l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
    detail::require_same_dim(a, b, "l2_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

namespace detail {
inline void require_prob_vector(const std::vector<double>& p, const char* what) {
    double s = 0.0;
    for (const double v : p) {
        if (v < 0.0) throw std::invalid_argument(std::string(what) + ": negative probability");
        s += v;
    }
    if (std::abs(s - 1.0) > 1e-9)
        throw std::invalid_argument(std::string(what) + ": probabilities must sum to 1");
}
}  // namespace detail

// Entropy in nats, with 0 ln 0 = 0.
inline double entropy(const std::vector<double>& p) {
    detail::require_prob_vector(p, "entropy");
    double h = 0.0;
    for (const double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

// KL(p || q) in nats; support violations surface as +infinity, never clamped.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    detail::require_same_dim(p, q, "kl_divergence");
    detail::require_prob_vector(p, "kl_divergence(p)");
    detail::require_prob_vector(q, "kl_divergence(q)");
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
        d += p[i] * std::log(p[i] / q[i]);
    }
    return d;
}

}  // namespace triview::stats
