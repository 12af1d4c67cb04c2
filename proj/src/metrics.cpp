#include "stgcl/metrics.hpp"

#include <cmath>
#include <limits>

namespace stgcl {

MetricsAccumulator::MetricsAccumulator(i64 horizon_steps, std::vector<i64> report_horizons)
    : horizon_steps_(horizon_steps),
      report_horizons_(std::move(report_horizons)),
      per_step_(static_cast<std::size_t>(horizon_steps)) {
    for (i64 h : report_horizons_) {
        if (h < 1 || h > horizon_steps_) {
            throw ConfigError("metrics: horizon " + std::to_string(h) + " outside [1," +
                              std::to_string(horizon_steps_) + "]");
        }
    }
}

void MetricsAccumulator::add(const Tensor& predictions, const Tensor& targets) {
    if (!predictions.same_shape(targets)) {
        throw ShapeError("metrics: prediction shape " + shape_str(predictions.shape()) +
                         " vs target shape " + shape_str(targets.shape()));
    }
    if (predictions.ndim() != 4 || predictions.shape()[1] != horizon_steps_) {
        throw ShapeError("metrics: expected (M,T,N,1) with T=" + std::to_string(horizon_steps_) +
                         ", got " + shape_str(predictions.shape()));
    }
    const i64 m = predictions.shape()[0];
    const i64 n = predictions.shape()[2];
    for (i64 b = 0; b < m; ++b) {
        for (i64 step = 0; step < horizon_steps_; ++step) {
            Sums& s = per_step_[static_cast<std::size_t>(step)];
            for (i64 node = 0; node < n; ++node) {
                const i64 idx = (b * horizon_steps_ + step) * n + node;
                const double err = predictions[idx] - targets[idx];
                s.abs += std::fabs(err);
                s.sq += err * err;
                ++s.count;
                if (std::fabs(targets[idx]) > kMapeEps) {
                    s.ape += std::fabs(err) / std::fabs(targets[idx]);
                    ++s.ape_count;
                }
            }
        }
    }
}

HorizonMetrics MetricsAccumulator::finalize(const Sums& s) const {
    if (s.count == 0) throw DataError("metrics: no samples accumulated");
    if (s.ape_count == 0) throw DataError("metrics: empty MAPE support (all targets near zero)");
    HorizonMetrics out;
    out.mae = s.abs / static_cast<double>(s.count);
    out.rmse = std::sqrt(s.sq / static_cast<double>(s.count));
    out.mape = 100.0 * s.ape / static_cast<double>(s.ape_count);
    return out;
}

HorizonMetrics MetricsAccumulator::horizon(i64 step) const {
    if (step < 1 || step > horizon_steps_) {
        throw ConfigError("metrics: horizon step " + std::to_string(step) + " out of range");
    }
    return finalize(per_step_[static_cast<std::size_t>(step - 1)]);
}

HorizonMetrics MetricsAccumulator::average() const {
    Sums total;
    for (const Sums& s : per_step_) {
        total.abs += s.abs;
        total.sq += s.sq;
        total.ape += s.ape;
        total.count += s.count;
        total.ape_count += s.ape_count;
    }
    return finalize(total);
}

double MetricsAccumulator::mean_abs_error() const {
    double abs = 0.0;
    i64 count = 0;
    for (const Sums& s : per_step_) {
        abs += s.abs;
        count += s.count;
    }
    if (count == 0) throw DataError("metrics: no samples accumulated");
    return abs / static_cast<double>(count);
}

double mean_absolute_error(const Tensor& predictions, const Tensor& targets) {
    if (!predictions.same_shape(targets)) {
        throw ShapeError("mae: shape mismatch " + shape_str(predictions.shape()) + " vs " +
                         shape_str(targets.shape()));
    }
    if (predictions.numel() == 0) throw ShapeError("mae: empty tensors");
    double acc = 0.0;
    for (i64 i = 0; i < predictions.numel(); ++i) {
        acc += std::fabs(predictions[i] - targets[i]);
    }
    return acc / static_cast<double>(predictions.numel());
}

// ===========================================================================
// Welch t-test
// ===========================================================================

namespace {

// Lentz's continued fraction for the incomplete beta function.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double reg_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    const double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - ln_beta);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * betacf(a, b, x) / a;
    }
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) {
        throw DataError("welch_t_test: need at least 2 samples per arm");
    }
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    WelchResult r;
    for (double v : a) r.mean_a += v;
    for (double v : b) r.mean_b += v;
    r.mean_a /= na;
    r.mean_b /= nb;
    double va = 0.0, vb = 0.0;
    for (double v : a) va += (v - r.mean_a) * (v - r.mean_a);
    for (double v : b) vb += (v - r.mean_b) * (v - r.mean_b);
    va /= (na - 1.0);  // sample variance
    vb /= (nb - 1.0);
    r.std_a = std::sqrt(va);
    r.std_b = std::sqrt(vb);

    const double se2 = va / na + vb / nb;
    const double diff = r.mean_a - r.mean_b;
    if (se2 == 0.0) {
        if (diff == 0.0) {
            r.t = 0.0;
            r.p = 1.0;
            r.dof = na + nb - 2.0;
        } else {
            r.t = diff > 0.0 ? std::numeric_limits<double>::infinity()
                             : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
            r.dof = na + nb - 2.0;
            r.degenerate = true;
        }
        return r;
    }
    r.t = diff / std::sqrt(se2);
    // Welch-Satterthwaite degrees of freedom
    const double num = se2 * se2;
    const double den = (va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0);
    r.dof = num / den;
    // two-sided p from the t distribution
    const double x = r.dof / (r.dof + r.t * r.t);
    r.p = reg_incomplete_beta(r.dof / 2.0, 0.5, x);
    return r;
}

}  // namespace stgcl
