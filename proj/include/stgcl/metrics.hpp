#pragma once

#include <map>
#include <vector>

#include "stgcl/tensor.hpp"

namespace stgcl {

// MAPE support threshold: entries with |y| <= this are excluded.
inline constexpr double kMapeEps = 1e-8;

struct HorizonMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;  // percent
};

// Streaming accumulator over (M,T,N,1) prediction/target batches on the
// original scale.
class MetricsAccumulator {
public:
    MetricsAccumulator(i64 horizon_steps, std::vector<i64> report_horizons);

    void add(const Tensor& predictions, const Tensor& targets);

    HorizonMetrics horizon(i64 step) const;        // 1-indexed step
    HorizonMetrics average() const;                // over all horizon steps
    const std::vector<i64>& report_horizons() const { return report_horizons_; }
    double mean_abs_error() const;                 // scalar over everything

private:
    struct Sums {
        double abs = 0.0;
        double sq = 0.0;
        double ape = 0.0;
        i64 count = 0;
        i64 ape_count = 0;
    };
    HorizonMetrics finalize(const Sums& s) const;

    i64 horizon_steps_;
    std::vector<i64> report_horizons_;
    std::vector<Sums> per_step_;
};

double mean_absolute_error(const Tensor& predictions, const Tensor& targets);

// Welch two-sample t-test, two-sided p-value. Degenerate (both variances
// zero, different means) is reported with an infinite statistic and p = 0.
struct WelchResult {
    double t = 0.0;
    double p = 1.0;
    double dof = 0.0;
    double mean_a = 0.0, std_a = 0.0;
    double mean_b = 0.0, std_b = 0.0;
    bool degenerate = false;
};

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

// Regularized incomplete beta function I_x(a,b) (continued fraction).
double reg_incomplete_beta(double a, double b, double x);

}  // namespace stgcl
