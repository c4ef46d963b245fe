#pragma once

#include <vector>

namespace cpcl {

// Continued-fraction evaluation (Lentz) of I_x(a, b).
double regularized_incomplete_beta(double a, double b, double x);

// P(T <= t) for Student's t with df degrees of freedom.
double student_t_cdf(double t, int df);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
};

// Two-sided paired t-test on equal-length score vectors, n >= 2. All-zero
// differences return (t=0, p=1) rather than 0/0.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace cpcl
