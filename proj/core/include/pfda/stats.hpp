#pragma once

#include <cstddef>
#include <vector>

namespace pfda {

struct PairedTTest {
  double t;
  double p;       // two-tailed
  std::size_t df; // n - 1
};

// Paired t-test on index-aligned samples; sample sd uses the n-1 denominator.
// Zero-variance differences raise ErrorKind::Undefined.
PairedTTest paired_t_test(const std::vector<double>& x,
                          const std::vector<double>& y);

// Product-moment correlation; zero variance in either input raises
// ErrorKind::Undefined.
double pearson_r(const std::vector<double>& x, const std::vector<double>& y);

// Two-tailed p for Student's t with df degrees of freedom, via the
// regularized incomplete beta function.
double student_t_two_tailed_p(double t, double df);

// Regularized incomplete beta I_x(a, b) by continued fraction (Lentz).
double regularized_incomplete_beta(double a, double b, double x);

}  // namespace pfda
