#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "plumeemu/cvae.hpp"
#include "plumeemu/error.hpp"
#include "plumeemu/synth.hpp"

using namespace plumeemu;

namespace {

std::size_t mean_head_index(const CvaeArchitecture& a) { return 2 * a.encoder.size(); }

std::vector<double> random_image(std::size_t side, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> img(side * side);
    for (auto& v : img) v = u(rng);
    return img;
}

PlumeSet small_plumes(std::size_t n, std::uint64_t seed) {
    const GridSpec grid{8, 8, 0.0, 0.0, 0.5, 0.5};
    PlumeShape shape;
    shape.sigma0 = 0.4;
    shape.spread = 0.2;
    WindField wind;
    wind.base_speed = 0.15;
    RegionBounds region{1.0, 3.0, 1.0, 3.0};
    return generate_dataset(n, region, TimeRange{}, wind, grid, seed, shape);
}

std::vector<std::vector<double>> rows(const PlumeSet& s) {
    std::vector<std::vector<double>> out;
    for (const auto& p : s.plumes) out.push_back(p.values);
    return out;
}

double mean_kl(const CvaeModel& m, const PlumeSet& s) {
    double total = 0.0;
    for (const auto& p : s.plumes) total += kl_term(encode(m, p.values));
    return total / static_cast<double>(s.size());
}

}  // namespace

TEST_SUITE("cvae") {

TEST_CASE("architectures validate") {
    CHECK_NOTHROW(CvaeArchitecture::standard(20).validate());
    CHECK_NOTHROW(CvaeArchitecture::miniature(2).validate());
    CHECK(CvaeArchitecture::standard(20).encoder_features() == 64);
    auto broken = CvaeArchitecture::standard(8);
    broken.encoder[2].in_channels = 7;
    CHECK_THROWS_AS(broken.validate(), ConfigError);
    auto odd = CvaeArchitecture::miniature(2);
    odd.input_side = 6;
    CHECK_THROWS_AS(odd.validate(), ConfigError);
    auto short_decoder = CvaeArchitecture::standard(8);
    short_decoder.decoder.pop_back();
    CHECK_THROWS_AS(short_decoder.validate(), ConfigError);
}

TEST_CASE("encode examples") {
    const CvaeModel model = init_model(CvaeArchitecture::standard(20), 3);
    std::mt19937_64 rng(1);
    const auto img = random_image(64, rng);
    const LatentCode a = encode(model, img), b = encode(model, img);
    CHECK(a.mean == b.mean);
    CHECK(a.log_variance == b.log_variance);
    CHECK(a.mean.size() + a.log_variance.size() == 40);

    CvaeModel zeroed = model;
    const std::size_t h = mean_head_index(zeroed.arch);
    for (std::size_t k = h; k < h + 4; ++k) zeroed.params[k].fill(0.0);
    const LatentCode z = encode(zeroed, img);
    for (double v : z.mean) CHECK(v == 0.0);
    for (double v : z.log_variance) CHECK(v == 0.0);

    CHECK_THROWS_AS(encode(model, std::vector<double>(63 * 64)), DimensionError);
}

TEST_CASE("sample_latent examples") {
    LatentCode code{{0.7, -1.2, 3.0}, {-50.0, -50.0, -50.0}};
    const auto u = sample_latent(code, 5);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(u[i] - code.mean[i]) < 1e-10);

    LatentCode c{{0.5, -2.0}, {0.4, -1.0}};
    std::mt19937_64 rng(6);
    const std::size_t n = 100000;
    std::vector<double> sum(2), sum2(2);
    for (std::size_t k = 0; k < n; ++k) {
        const auto d = sample_latent(c, rng);
        for (std::size_t i = 0; i < 2; ++i) {
            sum[i] += d[i];
            sum2[i] += d[i] * d[i];
        }
    }
    for (std::size_t i = 0; i < 2; ++i) {
        const double var = std::exp(c.log_variance[i]);
        const double m = sum[i] / n;
        const double v = (sum2[i] - n * m * m) / (n - 1);
        CHECK(std::abs(m - c.mean[i]) < 4.0 * std::sqrt(var / n));
        CHECK(std::abs(v / var - 1.0) < 0.05);
    }
    CHECK(sample_latent(c, 9) == sample_latent(c, 9));
}

TEST_CASE("decode examples") {
    const CvaeModel model = init_model(CvaeArchitecture::standard(8), 4);
    const std::vector<double> u{0.1, -0.4, 1.2, 0.0, 0.3, -0.9, 0.5, 2.0};
    const auto a = decode(model, u);
    CHECK(a == decode(model, u));
    CHECK(a.size() == 64 * 64);
    for (double delta : {1e-4, 1e-6}) {
        auto up = u;
        for (auto& v : up) v += delta;
        const auto b = decode(model, up);
        double d2 = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
        CHECK(std::sqrt(d2) < 1e3 * delta);
    }
    CHECK_THROWS_AS(decode(model, std::vector<double>(7)), DimensionError);
}

TEST_CASE("kl_term examples and nonnegativity") {
    CHECK(kl_term({{0.0}, {0.0}}) == 0.0);
    CHECK(kl_term({{1.0}, {0.0}}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(kl_term({{0.0}, {1.0}}) == doctest::Approx((std::exp(1.0) - 2.0) / 2.0).epsilon(1e-15));
    CHECK(kl_term({{0.0}, {1.0}}) == doctest::Approx(0.35914).epsilon(1e-5));
    CHECK(kl_term({{0, 0, 0, 0}, {0, 0, 0, 0}}) == 0.0);

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int t = 0; t < 10000; ++t) {
        LatentCode c{{u(rng), u(rng)}, {u(rng), u(rng)}};
        CHECK(kl_term(c) > 0.0);
    }
}

TEST_CASE("loss examples") {
    SUBCASE("perfect autoencoder with lambda 0") {
        CvaeModel m = init_model(CvaeArchitecture::miniature(2), 1);
        for (auto& p : m.params) p.fill(0.0);
        const std::size_t h = mean_head_index(m.arch);
        m.params[h + 3].fill(-50.0);  // log-variance bias
        m.params.back().fill(0.25);   // final decoder bias
        const std::vector<std::vector<double>> batch{std::vector<double>(64, 0.25)};
        std::mt19937_64 rng(2);
        CHECK(loss(m, batch, 1, 0.0, rng) == 0.0);
        const double kl = kl_term(encode(m, batch[0]));
        CHECK(loss(m, batch, 1, 0.7, rng) == doctest::Approx(0.7 * kl).epsilon(1e-14));
    }
    SUBCASE("reconstruction term equals mse times K") {
        const CvaeModel m = init_model(CvaeArchitecture::miniature(2), 2);
        std::mt19937_64 rng(3);
        const std::vector<std::vector<double>> batch{random_image(8, rng)};
        const FrozenNoise noise = draw_noise(1, 1, 2, rng);
        const LatentCode code = encode(m, batch[0]);
        std::vector<double> u(2);
        for (std::size_t i = 0; i < 2; ++i)
            u[i] = code.mean[i] + std::exp(0.5 * code.log_variance[i]) * noise[0][0][i];
        const double expect = mse(batch[0], decode(m, u)) * 64.0;
        CHECK(loss(m, batch, noise, 0.0) == doctest::Approx(expect).epsilon(1e-12));
        const auto lg = loss_and_gradients(m, batch, noise, 0.0);
        CHECK(lg.reconstruction == doctest::Approx(expect).epsilon(1e-12));
        CHECK(lg.loss == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("loss gradients match finite differences on the miniature") {
    CvaeModel m = init_model(CvaeArchitecture::miniature(2), 8);
    for (auto& p : m.params)
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += 0.05 * std::sin(static_cast<double>(i) + 1.0);
    std::mt19937_64 rng(9);
    const std::vector<std::vector<double>> batch{random_image(8, rng), random_image(8, rng)};
    const FrozenNoise noise = draw_noise(2, 2, 2, rng);
    const double lambda = 0.3;
    const auto lg = loss_and_gradients(m, batch, noise, lambda);
    CHECK(lg.loss == doctest::Approx(loss(m, batch, noise, lambda)).epsilon(1e-12));
    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t t = 0; t < m.params.size(); ++t)
        for (std::size_t i = 0; i < m.params[t].size(); ++i) {
            CvaeModel plus = m, minus = m;
            plus.params[t][i] += h;
            minus.params[t][i] -= h;
            const double fd = (loss(plus, batch, noise, lambda) - loss(minus, batch, noise, lambda)) / (2 * h);
            const double a = lg.gradients[t][i];
            worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
        }
    CHECK(worst < 1e-3);
}

TEST_CASE("train examples") {
    const PlumeSet data = small_plumes(32, 11);
    const auto arch = CvaeArchitecture::miniature(2);
    TrainConfig cfg;
    cfg.restarts = 1;
    cfg.batch_size = 8;
    cfg.learning_rate = 3e-3;
    cfg.seed = 5;

    SUBCASE("zero epochs returns the initialized model") {
        cfg.epochs = 0;
        const TrainResult r = train(data, arch, cfg);
        REQUIRE(r.restarts.size() == 1);
        CHECK(r.restarts[0].train_loss.empty());
        const CvaeModel fresh = init_model(arch, r.restarts[0].seed, cfg.lambda);
        for (std::size_t t = 0; t < fresh.params.size(); ++t) CHECK(r.model.params[t].storage() == fresh.params[t].storage());
    }
    SUBCASE("fifty epochs reduce the training loss") {
        cfg.epochs = 0;
        const double before = reconstruction_mse(train(data, arch, cfg).model, rows(data));
        cfg.epochs = 50;
        const TrainResult r = train(data, arch, cfg);
        CHECK(r.restarts[0].train_loss.size() == 50);
        CHECK(r.restarts[0].train_loss.back() < r.restarts[0].train_loss.front());
        CHECK(reconstruction_mse(r.model, rows(data)) < before);
    }
    SUBCASE("restart selection takes the lowest training mse") {
        cfg.epochs = 5;
        cfg.restarts = 3;
        const auto [tr, va] = split_train_validation(data, 0.75, 1);
        const TrainResult r = train(tr, arch, cfg, &va);
        REQUIRE(r.restarts.size() == 3);
        double best = r.restarts[0].final_train_mse;
        for (const auto& h : r.restarts) {
            best = std::min(best, h.final_train_mse);
            CHECK(h.validation_mse.size() == 5);
        }
        CHECK(r.restarts[r.best_restart].final_train_mse == best);
        CHECK(reconstruction_mse(r.model, rows(tr)) == doctest::Approx(best).epsilon(1e-14));
        CHECK(r.restarts[0].seed != r.restarts[1].seed);
    }
    SUBCASE("strong KL weight pulls codes toward the prior") {
        cfg.lambda = 10.0;
        cfg.epochs = 0;
        const double start = mean_kl(train(data, arch, cfg).model, data);
        cfg.epochs = 40;
        const double end = mean_kl(train(data, arch, cfg).model, data);
        CHECK(end < start);
    }
    SUBCASE("training is reproducible") {
        cfg.epochs = 3;
        const TrainResult a = train(data, arch, cfg), b = train(data, arch, cfg);
        for (std::size_t t = 0; t < a.model.params.size(); ++t) CHECK(a.model.params[t].storage() == b.model.params[t].storage());
        CHECK(a.restarts[0].train_loss == b.restarts[0].train_loss);
    }
    SUBCASE("diverging restarts abort") {
        cfg.epochs = 3;
        cfg.restarts = 2;
        cfg.learning_rate = 1e200;
        CHECK_THROWS_AS(train(data, arch, cfg), NumericError);
    }
    SUBCASE("invalid configuration") {
        cfg.batch_size = 0;
        CHECK_THROWS_AS(train(data, arch, cfg), ConfigError);
    }
}

TEST_CASE("split_train_validation examples") {
    const PlumeSet data = small_plumes(10, 3);
    const auto [a, b] = split_train_validation(data, 0.7, 42);
    CHECK(a.size() == 7);
    CHECK(b.size() == 3);
    const auto [ia, ib] = split_indices(10, 0.7, 42);
    std::vector<std::size_t> all(ia);
    all.insert(all.end(), ib.begin(), ib.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(10);
    std::iota(expect.begin(), expect.end(), std::size_t{0});
    CHECK(all == expect);
    for (std::size_t k = 0; k < ia.size(); ++k) CHECK(a.plumes[k].values == data.plumes[ia[k]].values);
    CHECK(split_indices(10, 0.7, 42) == split_indices(10, 0.7, 42));
    CHECK_THROWS_AS(split_indices(1, 0.7, 1), DimensionError);
    CHECK_THROWS_AS(split_indices(10, 1.0, 1), ConfigError);
    CHECK_THROWS_AS(split_indices(10, 0.0, 1), ConfigError);
}

TEST_CASE("CVAE1 round trip") {
    CvaeModel m = init_model(CvaeArchitecture::standard(4), 12, 2e-9);
    m.input_scale = 0.031;
    std::stringstream ss;
    write_cvae(ss, m);
    const CvaeModel back = read_cvae(ss);
    CHECK(back.lambda == m.lambda);
    CHECK(back.input_scale == m.input_scale);
    CHECK(back.arch.encoder.size() == m.arch.encoder.size());
    REQUIRE(back.params.size() == m.params.size());
    for (std::size_t t = 0; t < m.params.size(); ++t) CHECK(back.params[t].storage() == m.params[t].storage());
    std::mt19937_64 rng(13);
    const auto img = random_image(64, rng);
    CHECK(encode(back, img).mean == encode(m, img).mean);
    std::stringstream bad("CVAE2\n");
    CHECK_THROWS_AS(read_cvae(bad), ConfigError);
}

}  // TEST_SUITE
