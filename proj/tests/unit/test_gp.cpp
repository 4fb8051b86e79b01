#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "plumeemu/error.hpp"
#include "plumeemu/gp.hpp"

using namespace plumeemu;
using linalg::Matrix;
using linalg::Vector;

namespace {

std::vector<StPoint> random_points(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> lon(-5.0, 5.0), lat(45.0, 55.0), t(0.0, 720.0);
    std::vector<StPoint> pts(n);
    for (auto& p : pts) p = {lon(rng), lat(rng), t(rng)};
    return pts;
}

std::vector<double> random_targets(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d;
    std::vector<double> y(n);
    for (auto& v : y) v = d(rng);
    return y;
}

Matrix gram(const std::vector<StPoint>& pts, const GpHyper& h, double jitter) {
    const auto n = static_cast<Eigen::Index>(pts.size());
    Matrix k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) k(i, j) = kernel(pts[std::size_t(i)], pts[std::size_t(j)], h);
    k.diagonal().array() += jitter;
    return k;
}

GpPrediction inverse_oracle(const GpModel& m, const StPoint& q) {
    const Matrix kinv = gram(m.train_points, m.hyper, m.jitter).inverse();
    Vector ks(static_cast<Eigen::Index>(m.train_points.size()));
    for (std::size_t i = 0; i < m.train_points.size(); ++i) ks(Eigen::Index(i)) = kernel(q, m.train_points[i], m.hyper);
    const Vector y = Eigen::Map<const Vector>(m.train_targets.data(), Eigen::Index(m.train_targets.size()));
    return {ks.dot(kinv * y), m.hyper.variance() - ks.dot(kinv * ks)};
}

}  // namespace

TEST_SUITE("gp") {

TEST_CASE("kernel examples") {
    const GpHyper h = GpHyper::from_values(2.5, 0.8, 12.0);
    const StPoint a{1.0, 50.0, 10.0};
    CHECK(kernel(a, a, h) == doctest::Approx(2.5).epsilon(1e-15));
    // |ds|^2 = 2 l_s with the same time.
    const StPoint b{1.0 + std::sqrt(2.0 * 0.8), 50.0, 10.0};
    CHECK(kernel(a, b, h) == doctest::Approx(2.5 * std::exp(-2.0)).epsilon(1e-14));
    std::mt19937_64 rng(1);
    const auto pts = random_points(40, rng);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) CHECK(kernel(pts[i], pts[i + 1], h) == kernel(pts[i + 1], pts[i], h));
    CHECK(seconds_to_hours(7200) == 2.0);
}

TEST_CASE("log marginal likelihood gradient matches finite differences") {
    std::mt19937_64 rng(2);
    const auto pts = random_points(12, rng);
    const auto y = random_targets(12, rng);
    const GpHyper h = GpHyper::from_values(0.9, 6.0, 80.0);
    std::array<double, 3> g{};
    log_marginal_likelihood(pts, y, h, {}, &g);
    const double step = 1e-6;
    for (int k = 0; k < 3; ++k) {
        GpHyper p = h, m = h;
        double* fp = k == 0 ? &p.log_variance : k == 1 ? &p.log_length_space : &p.log_length_time;
        double* fm = k == 0 ? &m.log_variance : k == 1 ? &m.log_length_space : &m.log_length_time;
        *fp += step;
        *fm -= step;
        const double fd = (log_marginal_likelihood(pts, y, p) - log_marginal_likelihood(pts, y, m)) / (2 * step);
        CHECK(g[std::size_t(k)] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("posterior examples") {
    std::mt19937_64 rng(3);
    const auto pts = random_points(6, rng);
    const auto y = random_targets(6, rng);
    const GpHyper h = GpHyper::from_values(1.7, 4.0, 50.0);

    const GpModel exact = condition(pts, y, h, JitterPolicy{0.0, 0.0});
    CHECK(exact.jitter == 0.0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto p = posterior(exact, pts[i]);
        CHECK(std::abs(p.mean - y[i]) < 1e-8);
        CHECK(std::abs(p.variance) < 1e-8);
    }
    const auto far = posterior(exact, StPoint{1e6, 1e6, 1e6});
    CHECK(std::abs(far.mean) < 1e-12);
    CHECK(far.variance == doctest::Approx(1.7).epsilon(1e-12));

    std::vector<StPoint> three(pts.begin(), pts.begin() + 3);
    std::vector<double> y3(y.begin(), y.begin() + 3);
    const GpModel m3 = condition(three, y3, h);
    for (const auto& q : random_points(10, rng)) {
        const auto p = posterior(m3, q);
        const auto o = inverse_oracle(m3, q);
        CHECK(std::abs(p.mean - o.mean) < 1e-8);
        CHECK(std::abs(p.variance - o.variance) < 1e-8);
    }
}

TEST_CASE("emulate_feature examples") {
    std::mt19937_64 rng(4);
    const auto pts = random_points(15, rng);
    const auto y = random_targets(15, rng);
    const GpModel m = condition(pts, y, GpHyper::from_values(0.5, 9.0, 100.0));
    CHECK(emulate_feature(m, std::vector<StPoint>{}).empty());
    const auto queries = random_points(50, rng);
    const auto batch = emulate_feature(m, queries);
    REQUIRE(batch.size() == 50);
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto single = posterior(m, queries[i]);
        CHECK(batch[i].mean == single.mean);
        CHECK(batch[i].variance == single.variance);
        const auto o = inverse_oracle(m, queries[i]);
        CHECK(batch[i].mean == doctest::Approx(o.mean).epsilon(1e-8).scale(1.0));
        CHECK(batch[i].variance == doctest::Approx(o.variance).epsilon(1e-8).scale(1.0));
    }
}

TEST_CASE("gp properties") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pts = random_points(25, rng);
        const auto y = random_targets(25, rng);
        const GpHyper h = GpHyper::from_values(0.3 + trial, 1.0 + trial, 10.0 * (trial + 1));
        const GpModel m = condition(pts, y, h, JitterPolicy{1e-10, 1e-6});
        CHECK(m.jitter <= 1e-6 * h.variance());
        CHECK((m.gram_factor * m.gram_factor.transpose() - gram(pts, h, m.jitter)).cwiseAbs().maxCoeff() <
              1e-8 * h.variance());

        std::vector<double> doubled(y);
        for (auto& v : doubled) v *= 2.0;
        const GpModel m2 = condition(pts, doubled, h, JitterPolicy{1e-10, 1e-6});
        for (const auto& q : random_points(10, rng)) {
            const auto p = posterior(m, q);
            CHECK(p.variance >= 0.0);
            CHECK(p.variance <= h.variance() + m.jitter);
            CHECK(posterior(m2, q).mean == 2.0 * p.mean);
        }
    }
}

TEST_CASE("fit_mle examples") {
    SUBCASE("all-zero targets drive the variance to its lower bound") {
        std::mt19937_64 rng(6);
        const auto pts = random_points(10, rng);
        const std::vector<double> y(10, 0.0);
        const GpModel m = fit_mle(pts, y, default_hyper(pts, y));
        CHECK(m.hyper.variance() <= 1e-11);
        for (const auto& q : random_points(5, rng)) CHECK(std::abs(posterior(m, q).mean) < 1e-12);
    }
    SUBCASE("optimizer never ends below an initialization") {
        std::mt19937_64 rng(7);
        const auto pts = random_points(20, rng);
        const auto y = random_targets(20, rng);
        GpFitReport report;
        GpFitConfig cfg;
        cfg.restarts = 4;
        const GpModel m = fit_mle(pts, y, default_hyper(pts, y), cfg, &report);
        REQUIRE(report.initializations.size() == 5);
        for (double ll : report.initial_log_likelihoods) CHECK(m.log_likelihood >= ll);
        for (double ll : report.final_log_likelihoods) CHECK(m.log_likelihood >= ll);
        CHECK(m.log_likelihood == doctest::Approx(log_marginal_likelihood(pts, y, m.hyper)).epsilon(1e-10));
    }
    SUBCASE("time-only length scale is recovered") {
        const double true_lt = 24.0;
        const GpHyper truth = GpHyper::from_values(1.0, 1.0, true_lt);
        std::vector<double> ratios;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            std::mt19937_64 rng(100 + seed);
            std::uniform_real_distribution<double> t(0.0, 720.0);
            std::vector<StPoint> pts(60);
            for (auto& p : pts) p = {0.0, 50.0, t(rng)};
            const Matrix k = gram(pts, truth, 1e-10);
            const Matrix l = k.llt().matrixL();
            std::normal_distribution<double> z;
            Vector e(60);
            for (Eigen::Index i = 0; i < 60; ++i) e(i) = z(rng);
            const Vector draw = l * e;
            const std::vector<double> y(draw.data(), draw.data() + 60);
            GpFitConfig cfg;
            cfg.seed = seed;
            const GpModel m = fit_mle(pts, y, default_hyper(pts, y), cfg);
            ratios.push_back(m.hyper.length_time() / true_lt);
        }
        std::nth_element(ratios.begin(), ratios.begin() + 10, ratios.end());
        const double median = ratios[10];
        CHECK(median > 0.5);
        CHECK(median < 2.0);
    }
    SUBCASE("too few points") {
        const std::vector<StPoint> one{{0, 0, 0}};
        const std::vector<double> y{1.0};
        CHECK_THROWS_AS(fit_mle(one, y, GpHyper{}), DimensionError);
    }
}

TEST_CASE("duplicate points without jitter fail to factorize") {
    const std::vector<StPoint> pts{{1, 2, 3}, {1, 2, 3}, {4, 5, 6}};
    const std::vector<double> y{1, 1, 2};
    CHECK_THROWS_AS(condition(pts, y, GpHyper::from_values(1, 1, 1), JitterPolicy{0.0, 0.0}), NumericError);
    const GpModel m = condition(pts, y, GpHyper::from_values(1, 1, 1));
    CHECK(m.jitter > 0.0);
    CHECK(m.jitter <= 1e-4);
}

}  // TEST_SUITE
