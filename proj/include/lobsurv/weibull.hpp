#pragma once

// Weibull time-to-fill head: survival and density in plain and log space.
// Parameters are carried as (log lambda, log k) so positivity holds by
// construction.

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lobsurv {

struct WeibullParams {
    double log_lambda = 0.0;
    double log_k = 0.0;

    double lambda() const { return std::exp(log_lambda); }
    double k() const { return std::exp(log_k); }
};

namespace weibull {

// (t/lambda)^k in log-safe form; t must be > 0.
inline double power_term(double t, const WeibullParams& w) {
    return std::exp(w.k() * (std::log(t) - w.log_lambda));
}

inline double log_survival(double t, const WeibullParams& w) {
    if (t < 0.0) throw std::domain_error("weibull: negative duration");
    if (t == 0.0) return 0.0;
    return -power_term(t, w);
}

inline double survival(double t, const WeibullParams& w) { return std::exp(log_survival(t, w)); }

inline double log_density(double t, const WeibullParams& w) {
    if (t < 0.0) throw std::domain_error("weibull: negative duration");
    const double k = w.k();
    if (t == 0.0) {
        if (k > 1.0) return -std::numeric_limits<double>::infinity();
        if (k == 1.0) return -w.log_lambda;
        return std::numeric_limits<double>::infinity();
    }
    const double u = k * (std::log(t) - w.log_lambda);
    return w.log_k + u - std::log(t) - std::exp(u);
}

inline double density(double t, const WeibullParams& w) {
    const double lg = log_density(t, w);
    if (std::isinf(lg) && lg > 0) return std::numeric_limits<double>::infinity();
    return std::exp(lg);
}

// Per-sample negative right-censored log-likelihood contribution.
inline double rcll_term(double duration, int delta, const WeibullParams& w) {
    return delta ? -log_density(duration, w) : -log_survival(duration, w);
}

}  // namespace weibull
}  // namespace lobsurv
