// Acceptance runner: prints one PASS/FAIL line per criterion and exits non-zero on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "plumeemu/cvae.hpp"
#include "plumeemu/eof.hpp"
#include "plumeemu/gp.hpp"
#include "plumeemu/pipeline.hpp"
#include "plumeemu/preprocess.hpp"
#include "plumeemu/synth.hpp"

using namespace plumeemu;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

Outcome table2_acknowledged() {
    return {true,
            "published sumMSE values 0.00697 / 0.00274 / 0.000312 / 0.000260 need the original dispersion-model "
            "datasets and are not reproduced; the property and desk-scale checks below replace them"};
}

Outcome gradient_check() {
    const auto t0 = Clock::now();
    const auto arch = CvaeArchitecture::miniature(2);
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> u(0.0, 1.0), jitter(-0.1, 0.1);
    CvaeModel model = init_model(arch, 7);
    for (auto& p : model.params)
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += jitter(rng);
    std::vector<std::vector<double>> batch(3, std::vector<double>(64));
    for (auto& img : batch)
        for (auto& v : img) v = u(rng);
    const FrozenNoise noise = draw_noise(batch.size(), 1, arch.latent_dim, rng);

    double worst = 0.0;
    std::size_t checked = 0;
    const double h = 1e-5;
    for (double lambda : {1e-9, 1.0}) {
        const auto lg = loss_and_gradients(model, batch, noise, lambda);
        for (std::size_t t = 0; t < model.params.size(); ++t)
            for (std::size_t i = 0; i < model.params[t].size(); ++i) {
                CvaeModel plus = model, minus = model;
                plus.params[t][i] += h;
                minus.params[t][i] -= h;
                const double fd = (loss(plus, batch, noise, lambda) - loss(minus, batch, noise, lambda)) / (2.0 * h);
                const double a = lg.gradients[t][i];
                worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
                ++checked;
            }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-3 && secs < 30.0, std::to_string(checked) + " partials, worst relative error " + fmt(worst) +
                                             " (limit 1e-3), " + fmt(secs) + " s (limit 30 s)"};
}

Outcome kl_check() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> mu(-1.5, 1.5), lv(-1.5, 1.5);
    std::normal_distribution<double> z(0.0, 1.0);
    const std::size_t r = 4, draws = 1000000;
    double worst = 0.0;
    for (int c = 0; c < 20; ++c) {
        LatentCode code;
        for (std::size_t k = 0; k < r; ++k) {
            code.mean.push_back(mu(rng));
            code.log_variance.push_back(lv(rng));
        }
        double sum = 0.0;
        for (std::size_t n = 0; n < draws; ++n) {
            double log_ratio = 0.0;
            for (std::size_t k = 0; k < r; ++k) {
                const double e = z(rng);
                const double x = code.mean[k] + std::exp(0.5 * code.log_variance[k]) * e;
                // log q(x) - log p(x), normalizing constants cancel.
                log_ratio += -0.5 * code.log_variance[k] - 0.5 * e * e + 0.5 * x * x;
            }
            sum += log_ratio;
        }
        const double mc = sum / static_cast<double>(draws);
        const double closed = kl_term(code);
        worst = std::max(worst, std::abs(mc - closed) / closed);
    }
    const double secs = seconds_since(t0);
    return {worst < 0.01 && secs < 10.0,
            "20 codes, worst relative gap " + fmt(worst) + " (limit 0.01), " + fmt(secs) + " s (limit 10 s)"};
}

Outcome eof_check() {
    const auto t0 = Clock::now();
    double worst_full = 0.0, worst_ey = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n;
        linalg::Matrix b(50, 64);
        for (Eigen::Index i = 0; i < b.rows(); ++i)
            for (Eigen::Index j = 0; j < b.cols(); ++j) b(i, j) = n(rng);
        const EofBasis full = fit_eof(b, 50);
        worst_full = std::max(worst_full, (b - reconstruct(full, full.train_coeffs)).norm());
        for (std::size_t r = 1; r < 50; ++r) {
            const EofBasis basis = fit_eof(b, r);
            const double err2 = (b - reconstruct(basis, basis.train_coeffs)).squaredNorm();
            const double tail = full.singular_values.tail(static_cast<Eigen::Index>(50 - r)).squaredNorm();
            worst_ey = std::max(worst_ey, std::abs(err2 - tail) / tail);
        }
    }
    const double secs = seconds_since(t0);
    return {worst_full < 1e-10 && worst_ey < 1e-8 && secs < 5.0,
            "full-rank Frobenius error " + fmt(worst_full) + " (limit 1e-10), Eckart-Young relative gap " +
                fmt(worst_ey) + " (limit 1e-8), " + fmt(secs) + " s (limit 5 s)"};
}

Outcome gp_check() {
    std::mt19937_64 rng(314);
    std::uniform_real_distribution<double> lon(-4.0, 4.0), lat(48.0, 56.0), t(0.0, 720.0), logu(-2.0, 2.0);
    std::normal_distribution<double> y(0.0, 1.0);
    double worst_oracle = 0.0, worst_interp = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(trial % 5);
        std::vector<StPoint> pts(n);
        std::vector<double> targets(n);
        for (std::size_t i = 0; i < n; ++i) {
            pts[i] = {lon(rng), lat(rng), t(rng)};
            targets[i] = y(rng);
        }
        const GpHyper h = GpHyper::from_values(std::exp(logu(rng)), 4.0 * std::exp(logu(rng)), 60.0 * std::exp(logu(rng)));
        const GpModel m = condition(pts, targets, h);

        linalg::Matrix k(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) k(Eigen::Index(i), Eigen::Index(j)) = kernel(pts[i], pts[j], h);
        k.diagonal().array() += m.jitter;
        const linalg::Matrix kinv = k.inverse();
        const linalg::Vector yy = Eigen::Map<const linalg::Vector>(targets.data(), Eigen::Index(n));
        for (int q = 0; q < 5; ++q) {
            const StPoint x{lon(rng), lat(rng), t(rng)};
            linalg::Vector ks(static_cast<Eigen::Index>(n));
            for (std::size_t i = 0; i < n; ++i) ks(Eigen::Index(i)) = kernel(x, pts[i], h);
            const double mean = ks.dot(kinv * yy);
            const double var = h.variance() - ks.dot(kinv * ks);
            const auto p = posterior(m, x);
            worst_oracle = std::max({worst_oracle, std::abs(p.mean - mean), std::abs(p.variance - var)});
        }

        const GpModel exact = condition(pts, targets, h, JitterPolicy{0.0, 0.0});
        for (std::size_t i = 0; i < n; ++i)
            worst_interp = std::max(worst_interp, std::abs(posterior(exact, pts[i]).mean - targets[i]));
    }
    return {worst_oracle < 1e-8 && worst_interp < 1e-6,
            "200 sets with N in 1..5: oracle gap " + fmt(worst_oracle) + " (limit 1e-8), interpolation error " +
                fmt(worst_interp) + " (limit 1e-6)"};
}

Outcome angle_check() {
    const GridSpec grid{64, 64, -32 * 0.352, 45.0, 0.352, 0.234};
    const RegionBounds region = central_region(grid);
    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> ulon(region.lon_min, region.lon_max), ulat(region.lat_min, region.lat_max);
    std::uniform_int_distribution<std::int64_t> ut(0, 30 * 86400);
    std::vector<double> errors;
    std::size_t undetermined = 0;
    for (int i = 0; i < 100; ++i) {
        WindField wind;
        wind.base_direction = -angle(rng);  // -U(-pi, pi) lies in (-pi, pi]
        wind.seed = static_cast<std::uint64_t>(i);
        const Plume p = generate_plume({ulon(rng), ulat(rng)}, ut(rng), wind, grid);
        const auto est = estimate_departure_angle(p);
        if (!est) {
            ++undetermined;
            errors.push_back(std::numbers::pi);
            continue;
        }
        errors.push_back(std::abs(wrap_angle(est->angle - *p.departure_angle)) * 180.0 / std::numbers::pi);
    }
    std::sort(errors.begin(), errors.end());
    const double median = 0.5 * (errors[49] + errors[50]);
    const double p95 = errors[94];
    return {median < 5.0 && p95 < 15.0 && undetermined == 0,
            "median " + fmt(median) + " deg (limit 5), 95th percentile " + fmt(p95) + " deg (limit 15), " +
                std::to_string(undetermined) + " undetermined"};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

ExperimentConfig desk_scale_config() {
    ExperimentConfig cfg;
    cfg.seed = 2024;
    cfg.synth.n_plumes = 400;
    cfg.synth.days = 30.0;
    cfg.synth.grid = GridSpec{64, 64, -32 * 0.352, 45.0, 0.352, 0.234};
    cfg.r = 8;
    cfg.n_samples = 100;
    cfg.cvae.epochs = 100;
    cfg.cvae.restarts = 3;
    cfg.reducers = {ReducerKind::Eof, ReducerKind::Cvae};
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"plumeemu acceptance checks"};
    std::string work_dir = (fs::temp_directory_path() / "plumeemu_acceptance").string();
    bool skip_e2e = false;
    app.add_option("--work-dir", work_dir, "Directory for the end-to-end runs");
    app.add_flag("--skip-e2e", skip_e2e, "Skip the two desk-scale end-to-end runs");
    CLI11_PARSE(app, argc, argv);

    bool all_pass = true;
    auto report = [&](const std::string& id, const std::function<Outcome()>& check) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all_pass = all_pass && o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << id << ": " << o.detail << std::endl;
    };

    report("table2-irreproducibility", table2_acknowledged);
    report("gradient-miniature-cvae", gradient_check);
    report("kl-monte-carlo", kl_check);
    report("eof-eckart-young", eof_check);
    report("gp-oracle", gp_check);
    report("angle-recovery", angle_check);

    if (skip_e2e) {
        std::cout << "SKIP end-to-end-desk-scale: --skip-e2e given\n";
        std::cout << "SKIP determinism: --skip-e2e given\n";
        return all_pass ? 0 : 1;
    }

    const ExperimentConfig cfg = desk_scale_config();
    const fs::path run_a = fs::path(work_dir) / "run_a", run_b = fs::path(work_dir) / "run_b";
    fs::remove_all(run_a);
    fs::remove_all(run_b);
    std::optional<ExperimentResult> first;
    report("end-to-end-desk-scale", [&]() -> Outcome {
        first = run_experiment(cfg, run_a.string());
        const auto& r = *first;
        const double eof = r.sum_mse_eof.value_or(NAN), cvae = r.sum_mse_cvae.value_or(NAN);
        const bool beats = eof < r.sum_mse_baseline && cvae < r.sum_mse_baseline;
        const bool nonneg = r.min_output_value >= 0.0;
        const bool fast = r.seconds < 7200.0;
        std::ostringstream d;
        d << std::setprecision(4) << "sumMSE baseline " << r.sum_mse_baseline << ", EOF " << eof << ", CVAE " << cvae
          << " (both below baseline: " << (beats ? "yes" : "no") << "); reported comparison CVAE <= EOF: "
          << (cvae <= eof ? "yes" : "no") << "; min output " << r.min_output_value << "; " << r.n_removed
          << " emulated plumes; runtime " << std::setprecision(5) << r.seconds << " s (limit 7200 s)";
        return {beats && nonneg && fast, d.str()};
    });
    report("determinism", [&]() -> Outcome {
        if (!first) return {false, "first run did not complete"};
        run_experiment(cfg, run_b.string());
        const std::string a = slurp(run_a / "metrics.csv"), b = slurp(run_b / "metrics.csv");
        const bool same = !a.empty() && a == b;
        return {same, "metrics.csv of two runs with seed " + std::to_string(cfg.seed) +
                          (same ? " are byte-identical (" + std::to_string(a.size()) + " bytes)" : " differ")};
    });
    return all_pass ? 0 : 1;
}
