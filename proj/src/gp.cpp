#include "plumeemu/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>

#include "plumeemu/error.hpp"

namespace plumeemu {

using linalg::Matrix;
using linalg::Vector;

double seconds_to_hours(std::int64_t seconds) { return static_cast<double>(seconds) / 3600.0; }

GpHyper GpHyper::from_values(double variance, double length_space, double length_time) {
    if (!(variance > 0.0) || !(length_space > 0.0) || !(length_time > 0.0))
        throw ConfigError("GpHyper: variance and length scales must be positive");
    return GpHyper{std::log(variance), std::log(length_space), std::log(length_time)};
}

double GpHyper::variance() const { return std::exp(log_variance); }
double GpHyper::length_space() const { return std::exp(log_length_space); }
double GpHyper::length_time() const { return std::exp(log_length_time); }

namespace {

double squared_space(const StPoint& a, const StPoint& b) {
    const double dx = a.lon - b.lon, dy = a.lat - b.lat;
    return dx * dx + dy * dy;
}

// exp(-d2/l_s - |dt|/l_t), the unscaled correlation.
double correlation(const StPoint& a, const StPoint& b, double inv_ls, double inv_lt) {
    return std::exp(-squared_space(a, b) * inv_ls - std::abs(a.time - b.time) * inv_lt);
}

void check_data(std::span<const StPoint> points, std::span<const double> targets) {
    if (points.size() != targets.size())
        throw DimensionError("gp: " + std::to_string(points.size()) + " points but " +
                             std::to_string(targets.size()) + " targets");
    if (points.empty()) throw DimensionError("gp: no training data");
}

Matrix correlation_matrix(std::span<const StPoint> points, const GpHyper& h) {
    const auto n = static_cast<Eigen::Index>(points.size());
    const double inv_ls = 1.0 / h.length_space(), inv_lt = 1.0 / h.length_time();
    Matrix c(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        c(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = correlation(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)],
                                         inv_ls, inv_lt);
            c(i, j) = v;
            c(j, i) = v;
        }
    }
    return c;
}

struct Factorized {
    Matrix lower;
    double jitter_rel = 0.0;
};

// Factorizes var * (C + rel * I) with escalating relative jitter.
std::optional<Factorized> factorize(const Matrix& corr, double variance, const JitterPolicy& policy) {
    double rel = policy.initial;
    for (;;) {
        Matrix k = corr;
        k.diagonal().array() += rel;
        k *= variance;
        if (auto l = linalg::cholesky(k)) return Factorized{std::move(*l), rel};
        if (rel >= policy.max) return std::nullopt;
        rel = rel == 0.0 ? 1e-10 : std::min(rel * 10.0, policy.max);
        if (rel > policy.max) return std::nullopt;
    }
}

Vector to_vector(std::span<const double> v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double lml_from_factor(const Matrix& lower, const Vector& y, const Vector& alpha) {
    const double n = static_cast<double>(y.size());
    double log_det_half = 0.0;
    for (Eigen::Index i = 0; i < lower.rows(); ++i) log_det_half += std::log(lower(i, i));
    return -0.5 * y.dot(alpha) - log_det_half - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

}  // namespace

double kernel(const StPoint& a, const StPoint& b, const GpHyper& h) {
    const double inner = std::exp(-squared_space(a, b) / (2.0 * h.length_space()) -
                                  std::abs(a.time - b.time) / (2.0 * h.length_time()));
    return h.variance() * inner * inner;
}

GpModel condition(std::span<const StPoint> points, std::span<const double> targets, const GpHyper& hyper,
                  const JitterPolicy& jitter) {
    check_data(points, targets);
    const Matrix corr = correlation_matrix(points, hyper);
    auto f = factorize(corr, hyper.variance(), jitter);
    if (!f) throw NumericError("gp: Gram matrix is not positive definite even with maximum jitter");
    GpModel m;
    m.hyper = hyper;
    m.train_points.assign(points.begin(), points.end());
    m.train_targets.assign(targets.begin(), targets.end());
    m.jitter = f->jitter_rel * hyper.variance();
    const Vector y = to_vector(targets);
    m.alpha = linalg::cholesky_solve(f->lower, y);
    m.log_likelihood = lml_from_factor(f->lower, y, m.alpha);
    m.gram_factor = std::move(f->lower);
    return m;
}

double log_marginal_likelihood(std::span<const StPoint> points, std::span<const double> targets,
                               const GpHyper& hyper, const JitterPolicy& jitter, std::array<double, 3>* gradient) {
    check_data(points, targets);
    const Matrix corr = correlation_matrix(points, hyper);
    const double var = hyper.variance();
    auto f = factorize(corr, var, jitter);
    if (!f) throw NumericError("gp: Gram matrix is not positive definite even with maximum jitter");
    const Vector y = to_vector(targets);
    const Vector alpha = linalg::cholesky_solve(f->lower, y);
    const double lml = lml_from_factor(f->lower, y, alpha);
    if (gradient) {
        // d lml / d theta = 0.5 tr((alpha alpha^T - K^{-1}) dK/dtheta)
        const auto n = static_cast<Eigen::Index>(points.size());
        const Matrix k_inv = linalg::cholesky_solve(f->lower, Matrix::Identity(n, n));
        const Matrix w = alpha * alpha.transpose() - k_inv;
        const double inv_ls = 1.0 / hyper.length_space(), inv_lt = 1.0 / hyper.length_time();
        double g_var = 0.0, g_ls = 0.0, g_lt = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            // K = var * (C + rel I), so dK/dlog var = K.
            g_var += w(i, i) * var * (1.0 + f->jitter_rel);
            for (Eigen::Index j = 0; j < i; ++j) {
                const auto& a = points[static_cast<std::size_t>(i)];
                const auto& b = points[static_cast<std::size_t>(j)];
                const double kij = var * corr(i, j);
                const double wij = 2.0 * w(i, j);
                g_var += wij * kij;
                g_ls += wij * kij * squared_space(a, b) * inv_ls;
                g_lt += wij * kij * std::abs(a.time - b.time) * inv_lt;
            }
        }
        *gradient = {0.5 * g_var, 0.5 * g_ls, 0.5 * g_lt};
    }
    return lml;
}

GpHyper default_hyper(std::span<const StPoint> points, std::span<const double> targets) {
    check_data(points, targets);
    double second_moment = 0.0;
    for (double t : targets) second_moment += t * t;
    second_moment /= static_cast<double>(targets.size());
    std::vector<double> d2, dt;
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = 0; j < i; ++j) {
            const double s = squared_space(points[i], points[j]);
            const double t = std::abs(points[i].time - points[j].time);
            if (s > 0.0) d2.push_back(s);
            if (t > 0.0) dt.push_back(t);
        }
    auto median = [](std::vector<double>& v, double fallback) {
        if (v.empty()) return fallback;
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    return GpHyper::from_values(second_moment > 0.0 ? second_moment : 1.0, median(d2, 1.0), median(dt, 1.0));
}

namespace {

struct Bounds {
    std::array<double, 3> lo;
    std::array<double, 3> hi;
};

Bounds hyper_bounds(std::span<const double> targets) {
    double second_moment = 0.0;
    for (double t : targets) second_moment += t * t;
    second_moment /= static_cast<double>(targets.size());
    const double scale = std::max(second_moment, 1e-12);
    return Bounds{{std::log(1e-12 * scale), std::log(1e-6), std::log(1e-6)},
                  {std::log(1e4 * scale), std::log(1e8), std::log(1e8)}};
}

std::array<double, 3> to_array(const GpHyper& h) { return {h.log_variance, h.log_length_space, h.log_length_time}; }
GpHyper to_hyper(const std::array<double, 3>& x) { return GpHyper{x[0], x[1], x[2]}; }

struct Objective {
    std::span<const StPoint> points;
    std::span<const double> targets;
    JitterPolicy jitter;

    // Negative log likelihood; nullopt when the Gram matrix cannot be factorized.
    std::optional<double> operator()(const std::array<double, 3>& x, std::array<double, 3>& grad) const {
        try {
            std::array<double, 3> g{};
            const double lml = log_marginal_likelihood(points, targets, to_hyper(x), jitter, &g);
            if (!std::isfinite(lml)) return std::nullopt;
            for (int i = 0; i < 3; ++i) grad[static_cast<std::size_t>(i)] = -g[static_cast<std::size_t>(i)];
            return -lml;
        } catch (const NumericError&) {
            return std::nullopt;
        }
    }
};

// Projected BFGS on a box.
std::array<double, 3> minimize(const Objective& f, std::array<double, 3> x, const Bounds& box, int max_iter) {
    constexpr std::size_t n = 3;
    for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], box.lo[i], box.hi[i]);
    std::array<double, 3> g{};
    auto fx = f(x, g);
    if (!fx) return x;
    Eigen::Matrix3d h_inv = Eigen::Matrix3d::Identity();
    for (int iter = 0; iter < max_iter; ++iter) {
        // Variables pinned at a bound with the gradient pushing outward stay fixed.
        std::array<bool, 3> fixed{};
        double pg_norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            fixed[i] = (x[i] <= box.lo[i] && g[i] > 0.0) || (x[i] >= box.hi[i] && g[i] < 0.0);
            if (!fixed[i]) pg_norm = std::max(pg_norm, std::abs(g[i]));
        }
        if (pg_norm < 1e-7) break;
        Eigen::Vector3d gv(g[0], g[1], g[2]);
        for (std::size_t i = 0; i < n; ++i)
            if (fixed[i]) gv(static_cast<Eigen::Index>(i)) = 0.0;
        Eigen::Vector3d d = -(h_inv * gv);
        for (std::size_t i = 0; i < n; ++i)
            if (fixed[i]) d(static_cast<Eigen::Index>(i)) = 0.0;
        if (d.dot(gv) >= 0.0) {
            h_inv.setIdentity();
            d = -gv;
        }
        const double max_step = d.cwiseAbs().maxCoeff();
        double step = max_step > 2.0 ? 2.0 / max_step : 1.0;

        std::array<double, 3> x_new{}, g_new{};
        std::optional<double> f_new;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
            double decrease = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                x_new[i] = std::clamp(x[i] + step * d(static_cast<Eigen::Index>(i)), box.lo[i], box.hi[i]);
                decrease += g[i] * (x_new[i] - x[i]);
            }
            f_new = f(x_new, g_new);
            if (f_new && *f_new <= *fx + 1e-4 * decrease) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;

        Eigen::Vector3d s, yv;
        for (std::size_t i = 0; i < n; ++i) {
            s(static_cast<Eigen::Index>(i)) = x_new[i] - x[i];
            yv(static_cast<Eigen::Index>(i)) = g_new[i] - g[i];
        }
        const double improvement = *fx - *f_new;
        x = x_new;
        g = g_new;
        fx = f_new;
        const double sy = s.dot(yv);
        if (sy > 1e-12) {
            const double rho = 1.0 / sy;
            const Eigen::Matrix3d id = Eigen::Matrix3d::Identity();
            h_inv = (id - rho * s * yv.transpose()) * h_inv * (id - rho * yv * s.transpose()) + rho * s * s.transpose();
        }
        if (improvement < 1e-10 * (1.0 + std::abs(*fx)) && s.cwiseAbs().maxCoeff() < 1e-8) break;
    }
    return x;
}

}  // namespace

GpModel fit_mle(std::span<const StPoint> points, std::span<const double> targets, const GpHyper& init,
                const GpFitConfig& cfg, GpFitReport* report) {
    check_data(points, targets);
    if (points.size() < 2) throw DimensionError("fit_mle: need at least two training points");
    const Bounds box = hyper_bounds(targets);
    const Objective objective{points, targets, cfg.jitter};

    std::vector<std::array<double, 3>> starts{to_array(init)};
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> jitter_var(-2.0, 2.0), jitter_len(-3.0, 3.0);
    const auto base = to_array(default_hyper(points, targets));
    for (std::size_t r = 0; r < cfg.restarts; ++r)
        starts.push_back({base[0] + jitter_var(rng), base[1] + jitter_len(rng), base[2] + jitter_len(rng)});

    std::optional<GpModel> best;
    for (auto& start : starts) {
        for (std::size_t i = 0; i < 3; ++i) start[i] = std::clamp(start[i], box.lo[i], box.hi[i]);
        std::array<double, 3> g{};
        const auto f0 = objective(start, g);
        const auto x = minimize(objective, start, box, cfg.max_iterations);
        std::optional<GpModel> model;
        try {
            model = condition(points, targets, to_hyper(x), cfg.jitter);
        } catch (const NumericError&) {
        }
        if (report) {
            report->initializations.push_back(to_hyper(start));
            report->initial_log_likelihoods.push_back(f0 ? -*f0 : -std::numeric_limits<double>::infinity());
            report->final_log_likelihoods.push_back(model ? model->log_likelihood
                                                          : -std::numeric_limits<double>::infinity());
        }
        if (model && (!best || model->log_likelihood > best->log_likelihood)) best = std::move(model);
    }
    if (!best) throw NumericError("fit_mle: no restart produced a factorizable Gram matrix");
    return std::move(*best);
}

GpPrediction posterior(const GpModel& model, const StPoint& query) {
    const auto n = static_cast<Eigen::Index>(model.train_points.size());
    Vector k_star(n);
    for (Eigen::Index i = 0; i < n; ++i)
        k_star(i) = kernel(query, model.train_points[static_cast<std::size_t>(i)], model.hyper);
    GpPrediction out;
    out.mean = k_star.dot(model.alpha);
    const Vector v = linalg::forward_substitute(model.gram_factor, k_star);
    out.variance = std::max(0.0, model.hyper.variance() - v.squaredNorm());
    return out;
}

std::vector<GpPrediction> emulate_feature(const GpModel& model, std::span<const StPoint> queries) {
    std::vector<GpPrediction> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(posterior(model, q));
    return out;
}

}  // namespace plumeemu
