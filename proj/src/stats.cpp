#include "cpcl/stats.hpp"

#include <cmath>
#include <limits>

#include "cpcl/errors.hpp"

namespace cpcl {

namespace {

// Continued fraction for I_x(a,b), converges fast for x < (a+1)/(a+b+2).
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;

    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ValueError("incomplete beta: a and b must be positive");
    if (x < 0.0 || x > 1.0) throw ValueError("incomplete beta: x must lie in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * betacf(a, b, x) / a;
    }
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, int df) {
    if (df < 1) throw ValueError("student_t_cdf: df must be >= 1");
    if (t == 0.0) return 0.5;
    const double nu = static_cast<double>(df);
    const double x = nu / (nu + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(nu / 2.0, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ValueError("paired_t_test: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw ValueError("paired_t_test: need at least 2 pairs");

    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (a[i] - b[i]) - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    TTestResult r;
    r.df = static_cast<int>(n) - 1;
    if (sd == 0.0) {
        if (mean == 0.0) return r;  // identical scores: t = 0, p = 1
        r.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        return r;
    }
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p = 2.0 * (1.0 - student_t_cdf(std::abs(r.t), r.df));
    return r;
}

}  // namespace cpcl
