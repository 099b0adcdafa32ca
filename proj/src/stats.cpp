#include "predloop/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace predloop {

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
    const std::size_t n = xs.size();
    if (n < 3) throw std::invalid_argument("pearson: need n >= 3");
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0)
        throw DegenerateVarianceError("pearson: zero variance input");
    return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    return pearson(average_ranks(xs), average_ranks(ys));
}

namespace {

double t_log_norm_const(int nu) {
    return std::lgamma((nu + 1) / 2.0) - std::lgamma(nu / 2.0) -
           0.5 * std::log(nu * 3.14159265358979323846);
}

double t_density(double t, int nu, double log_c) {
    return std::exp(log_c - 0.5 * (nu + 1) * std::log1p(t * t / nu));
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa,
                        double fm, double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
    if (!(b > a)) return 0.0;
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

/// Upper-tail probability P(T > t) for t >= 0. The infinite tail is folded to
/// a finite interval with u = 1/x, which stays smooth for every nu >= 1.
double t_upper_tail(double t, int nu) {
    const double log_c = t_log_norm_const(nu);
    const auto density = [&](double u) { return t_density(u, nu, log_c); };
    const auto tail_from = [&](double lo) {  // integral over [lo, inf), lo >= 1
        const auto folded = [&](double x) {
            if (x <= 0.0) return 0.0;
            const double u = 1.0 / x;
            return t_density(u, nu, log_c) * u * u;
        };
        return integrate(folded, 0.0, 1.0 / lo, 1e-13);
    };
    if (std::isinf(t)) return 0.0;
    if (t >= 1.0) return tail_from(t);
    return integrate(density, t, 1.0, 1e-13) + tail_from(1.0);
}

}  // namespace

double student_t_cdf(double t, int nu) {
    if (nu < 1) throw std::invalid_argument("student_t_cdf: nu must be >= 1");
    if (t == 0.0) return 0.5;
    return t > 0.0 ? 1.0 - t_upper_tail(t, nu) : t_upper_tail(-t, nu);
}

double student_t_two_sided_p(double t, int nu) {
    if (nu < 1) throw std::invalid_argument("student_t_two_sided_p: nu must be >= 1");
    const double p = 2.0 * t_upper_tail(std::abs(t), nu);
    return std::clamp(p, 0.0, 1.0);
}

double student_t_quantile(double p, int nu) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("student_t_quantile: p in (0,1)");
    if (p == 0.5) return 0.0;
    // Expand a bracket, then bisect on the CDF.
    double lo = -1.0, hi = 1.0;
    while (student_t_cdf(lo, nu) > p) lo *= 2.0;
    while (student_t_cdf(hi, nu) < p) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double c = student_t_cdf(mid, nu);
        if (std::abs(c - p) < 1e-9 && (hi - lo) < 1e-9 * std::max(1.0, std::abs(mid))) return mid;
        if (c < p) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

double CorrelationReport::ci_half_width(double x) const {
    if (n <= 2 || sxx <= 0.0) return 0.0;
    const double dx = x - x_mean;
    return t_crit * resid_std * std::sqrt(1.0 / n + dx * dx / sxx);
}

CorrelationReport linear_fit_stats(const std::vector<double>& xs, const std::vector<double>& ys,
                                   const std::string& metric_name) {
    if (xs.size() != ys.size()) throw std::invalid_argument("linear_fit_stats: length mismatch");
    const int n = static_cast<int>(xs.size());
    if (n < 3) throw std::invalid_argument("linear_fit_stats: need n >= 3");

    CorrelationReport rep;
    rep.metric = metric_name;
    rep.n = n;
    rep.pearson_r = pearson(xs, ys);  // throws DegenerateVarianceError as required

    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (int i = 0; i < n; ++i) {
        const double dx = xs[static_cast<std::size_t>(i)] - mx;
        const double dy = ys[static_cast<std::size_t>(i)] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    rep.slope = sxy / sxx;
    rep.intercept = my - rep.slope * mx;
    rep.x_mean = mx;
    rep.sxx = sxx;

    double ss_res = 0.0;
    for (int i = 0; i < n; ++i) {
        const double resid = ys[static_cast<std::size_t>(i)] -
                             (rep.slope * xs[static_cast<std::size_t>(i)] + rep.intercept);
        ss_res += resid * resid;
    }
    rep.r_squared = 1.0 - ss_res / syy;
    rep.resid_std = std::sqrt(std::max(0.0, ss_res) / (n - 2));

    const double r = rep.pearson_r;
    const double denom = 1.0 - r * r;
    if (denom <= 0.0) {
        rep.p_value = 0.0;  // perfect fit; reported below 1e-12
    } else {
        const double t = r * std::sqrt((n - 2) / denom);
        rep.p_value = student_t_two_sided_p(t, n - 2);
    }
    rep.t_crit = student_t_quantile(0.975, n - 2);
    return rep;
}

}  // namespace predloop
