#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "plumeemu/linalg.hpp"

namespace plumeemu {

/// Space-time location: degrees and hours.
struct StPoint {
    double lon = 0.0;
    double lat = 0.0;
    double time = 0.0;
};

double seconds_to_hours(std::int64_t seconds);

/// Kernel hyperparameters, stored on the log scale for unconstrained optimization.
/// length_space is on the squared-degree scale, length_time in hours.
struct GpHyper {
    double log_variance = 0.0;
    double log_length_space = 0.0;
    double log_length_time = 0.0;

    static GpHyper from_values(double variance, double length_space, double length_time);
    double variance() const;
    double length_space() const;
    double length_time() const;
};

/// Spatio-temporal squared-exponential kernel, with the bracketed exponential squared:
/// var * exp(-|ds|^2 / (2 l_s) - |dt| / (2 l_t))^2 = var * exp(-|ds|^2 / l_s - |dt| / l_t).
double kernel(const StPoint& a, const StPoint& b, const GpHyper& h);

/// Diagonal inflation of the Gram matrix, relative to the kernel variance.
/// Factorization starts at `initial` (0 allowed) and escalates x10 up to `max`.
struct JitterPolicy {
    double initial = 1e-10;
    double max = 1e-4;
};

struct GpModel {
    GpHyper hyper;
    std::vector<StPoint> train_points;
    std::vector<double> train_targets;
    /// Lower Cholesky factor of S(W, W) + jitter * I.
    linalg::Matrix gram_factor;
    /// Absolute jitter added to the diagonal.
    double jitter = 0.0;
    /// (S(W, W) + jitter I)^{-1} targets.
    linalg::Vector alpha;
    double log_likelihood = 0.0;
};

/// Factorizes the Gram matrix at fixed hyperparameters. Throws NumericError when the
/// matrix is not positive definite even at the maximum jitter.
GpModel condition(std::span<const StPoint> points, std::span<const double> targets, const GpHyper& hyper,
                  const JitterPolicy& jitter = {});

/// Exact Gaussian log marginal likelihood. When `gradient` is non-null it receives
/// d/d(log_variance, log_length_space, log_length_time).
double log_marginal_likelihood(std::span<const StPoint> points, std::span<const double> targets,
                               const GpHyper& hyper, const JitterPolicy& jitter = {},
                               std::array<double, 3>* gradient = nullptr);

struct GpFitConfig {
    /// Random restarts in addition to the supplied initialization.
    std::size_t restarts = 5;
    std::uint64_t seed = 0;
    int max_iterations = 200;
    JitterPolicy jitter;
};

struct GpFitReport {
    std::vector<GpHyper> initializations;
    std::vector<double> initial_log_likelihoods;
    std::vector<double> final_log_likelihoods;
};

/// Maximum-likelihood fit by projected BFGS on log-hyperparameters with analytic
/// gradients; returns the best of all restarts.
GpModel fit_mle(std::span<const StPoint> points, std::span<const double> targets, const GpHyper& init,
                const GpFitConfig& cfg = {}, GpFitReport* report = nullptr);

/// Data-driven starting point: target second moment, median squared spatial
/// separation, median time separation.
GpHyper default_hyper(std::span<const StPoint> points, std::span<const double> targets);

struct GpPrediction {
    double mean = 0.0;
    double variance = 0.0;
};

GpPrediction posterior(const GpModel& model, const StPoint& query);
std::vector<GpPrediction> emulate_feature(const GpModel& model, std::span<const StPoint> queries);

}  // namespace plumeemu
