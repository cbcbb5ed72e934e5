#pragma once

#include <cmath>
#include <vector>

#include "uvdiff/common.hpp"

namespace uvdiff {

// Linear-beta noise schedule. Timesteps are 1-based: t in [1, T], with the
// convention alpha_bar(0) = 1 (the clean-data endpoint), so predict/step
// formulas can reference t-1 uniformly. Tables are kept in double regardless
// of the tensor element type.
class NoiseSchedule {
public:
    static NoiseSchedule linear(int steps, double beta_start = 1e-4,
                                double beta_end = 2e-2) {
        require(steps >= 1, "schedule: steps must be >= 1");
        require(beta_start > 0 && beta_end < 1 && beta_start <= beta_end,
                "schedule: betas must satisfy 0 < start <= end < 1");
        NoiseSchedule s;
        s.T_ = steps;
        s.beta_.resize(std::size_t(steps));
        s.alpha_bar_.resize(std::size_t(steps));
        double abar = 1.0;
        for (int t = 1; t <= steps; ++t) {
            const double frac = steps == 1 ? 0.0 : double(t - 1) / double(steps - 1);
            const double b = beta_start + (beta_end - beta_start) * frac;
            s.beta_[std::size_t(t - 1)] = b;
            abar *= 1.0 - b;
            s.alpha_bar_[std::size_t(t - 1)] = abar;
        }
        return s;
    }

    int steps() const { return T_; }

    double beta(int t) const {
        check_t(t);
        return beta_[std::size_t(t - 1)];
    }
    double alpha(int t) const { return 1.0 - beta(t); }

    double alpha_bar(int t) const {
        require(t >= 0 && t <= T_, "schedule: t out of range [0,T]");
        return t == 0 ? 1.0 : alpha_bar_[std::size_t(t - 1)];
    }

    // Posterior variance beta~_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t;
    // zero at t = 1, which makes the final reverse step deterministic.
    double posterior_var(int t) const {
        check_t(t);
        return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
    }

private:
    void check_t(int t) const { require(t >= 1 && t <= T_, "schedule: t out of range [1,T]"); }

    int T_ = 0;
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
};

} // namespace uvdiff
