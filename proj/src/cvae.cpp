#include "plumeemu/cvae.hpp"

#include <algorithm>
#include <exception>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include "binary_io.hpp"
#include "plumeemu/adam.hpp"
#include "plumeemu/error.hpp"
#include "plumeemu/graph.hpp"

namespace plumeemu {

namespace {

ConvLayerSpec encoder_stage(std::size_t in, std::size_t out) {
    return ConvLayerSpec{in, out, 3, 1, 1, 0, Activation::Selu, 2};
}

ConvLayerSpec decoder_stage(std::size_t in, std::size_t out, Activation act) {
    return ConvLayerSpec{in, out, 3, 2, 1, 1, act, 1};
}

std::size_t conv_out_side(std::size_t side, const ConvLayerSpec& s) {
    const long v = (static_cast<long>(side) + 2 * s.padding - s.kernel) / s.stride + 1;
    return v < 1 ? 0 : static_cast<std::size_t>(v);
}

std::size_t conv_transpose_out_side(std::size_t side, const ConvLayerSpec& s) {
    const long v = (static_cast<long>(side) - 1) * s.stride - 2 * s.padding + s.kernel + s.output_padding;
    return v < 1 ? 0 : static_cast<std::size_t>(v);
}

// Walks the encoder, returning (channels, side) of its output; throws on a broken chain.
std::pair<std::size_t, std::size_t> encoder_output(const CvaeArchitecture& a) {
    std::size_t channels = 1, side = a.input_side;
    for (std::size_t i = 0; i < a.encoder.size(); ++i) {
        const auto& s = a.encoder[i];
        if (s.in_channels != channels)
            throw ConfigError("cvae architecture: encoder stage " + std::to_string(i) + " expects " +
                              std::to_string(s.in_channels) + " channels, receives " + std::to_string(channels));
        if (s.kernel < 1 || s.stride < 1 || s.padding < 0 || s.pool < 1 || s.out_channels == 0)
            throw ConfigError("cvae architecture: invalid encoder stage " + std::to_string(i));
        side = conv_out_side(side, s);
        if (side == 0) throw ConfigError("cvae architecture: encoder stage " + std::to_string(i) + " empties the image");
        if (side % static_cast<std::size_t>(s.pool) != 0)
            throw ConfigError("cvae architecture: pool window does not divide side at encoder stage " +
                              std::to_string(i));
        side /= static_cast<std::size_t>(s.pool);
        channels = s.out_channels;
    }
    return {channels, side};
}

}  // namespace

CvaeArchitecture CvaeArchitecture::standard(std::size_t latent_dim, std::size_t input_side) {
    CvaeArchitecture a;
    a.input_side = input_side;
    a.latent_dim = latent_dim;
    const std::size_t enc[] = {8, 16, 32, 32, 64, 64};
    std::size_t in = 1;
    for (std::size_t c : enc) {
        a.encoder.push_back(encoder_stage(in, c));
        in = c;
    }
    a.seed_channels = 64;
    a.seed_side = input_side >> 6;
    const std::size_t dec[] = {64, 32, 32, 16, 8, 1};
    in = a.seed_channels;
    for (std::size_t i = 0; i < 6; ++i) {
        a.decoder.push_back(decoder_stage(in, dec[i], i + 1 < 6 ? Activation::Selu : Activation::Linear));
        in = dec[i];
    }
    return a;
}

CvaeArchitecture CvaeArchitecture::miniature(std::size_t latent_dim) {
    CvaeArchitecture a;
    a.input_side = 8;
    a.latent_dim = latent_dim;
    a.encoder = {encoder_stage(1, 2), encoder_stage(2, 3)};
    a.seed_channels = 3;
    a.seed_side = 2;
    a.decoder = {decoder_stage(3, 2, Activation::Selu), decoder_stage(2, 1, Activation::Linear)};
    return a;
}

std::size_t CvaeArchitecture::encoder_features() const {
    const auto [c, s] = encoder_output(*this);
    return c * s * s;
}

void CvaeArchitecture::validate() const {
    if (input_side == 0) throw ConfigError("cvae architecture: input_side must be positive");
    if (latent_dim == 0) throw ConfigError("cvae architecture: latent dimension must be positive");
    if (seed_channels == 0 || seed_side == 0) throw ConfigError("cvae architecture: empty decoder seed");
    encoder_output(*this);
    std::size_t channels = seed_channels, side = seed_side;
    for (std::size_t i = 0; i < decoder.size(); ++i) {
        const auto& s = decoder[i];
        if (s.in_channels != channels)
            throw ConfigError("cvae architecture: decoder stage " + std::to_string(i) + " expects " +
                              std::to_string(s.in_channels) + " channels, receives " + std::to_string(channels));
        if (s.kernel < 1 || s.stride < 1 || s.padding < 0 || s.out_channels == 0 || s.output_padding < 0 ||
            (s.output_padding > 0 && s.output_padding >= s.stride))
            throw ConfigError("cvae architecture: invalid decoder stage " + std::to_string(i));
        side = conv_transpose_out_side(side, s);
        if (side == 0) throw ConfigError("cvae architecture: decoder stage " + std::to_string(i) + " is empty");
        channels = s.out_channels;
    }
    if (channels != 1 || side != input_side)
        throw ConfigError("cvae architecture: decoder produces " + std::to_string(channels) + "x" +
                          std::to_string(side) + "x" + std::to_string(side) + ", expected 1x" +
                          std::to_string(input_side) + "x" + std::to_string(input_side));
}

std::vector<Shape> CvaeArchitecture::parameter_shapes() const {
    validate();
    std::vector<Shape> shapes;
    for (const auto& s : encoder) {
        const auto k = static_cast<std::size_t>(s.kernel);
        shapes.push_back({s.out_channels, s.in_channels, k, k});
        shapes.push_back({s.out_channels});
    }
    const std::size_t f = encoder_features();
    for (int head = 0; head < 2; ++head) {
        shapes.push_back({latent_dim, f});
        shapes.push_back({latent_dim});
    }
    const std::size_t seed = seed_channels * seed_side * seed_side;
    shapes.push_back({seed, latent_dim});
    shapes.push_back({seed});
    for (const auto& s : decoder) {
        const auto k = static_cast<std::size_t>(s.kernel);
        shapes.push_back({s.in_channels, s.out_channels, k, k});
        shapes.push_back({s.out_channels});
    }
    return shapes;
}

CvaeModel init_model(const CvaeArchitecture& arch, std::uint64_t seed, double lambda) {
    CvaeModel m;
    m.arch = arch;
    m.lambda = lambda;
    std::mt19937_64 rng(seed);
    for (const auto& shape : arch.parameter_shapes()) {
        if (shape.size() == 1) {
            m.params.emplace_back(shape, 0.0);
        } else if (shape.size() == 2) {
            m.params.push_back(glorot_uniform(shape, shape[1], shape[0], rng));
        } else {
            const std::size_t kk = shape[2] * shape[3];
            // Conv kernels are [out, in, k, k]; transposed-conv kernels are [in, out, k, k].
            m.params.push_back(glorot_uniform(shape, shape[1] * kk, shape[0] * kk, rng));
        }
    }
    return m;
}

namespace {

struct ParamIndex {
    std::size_t enc_begin = 0;
    std::size_t mean_w = 0, mean_b = 0, logvar_w = 0, logvar_b = 0, dense_w = 0, dense_b = 0;
    std::size_t dec_begin = 0;
};

ParamIndex param_index(const CvaeArchitecture& a) {
    ParamIndex p;
    std::size_t i = 2 * a.encoder.size();
    p.mean_w = i++;
    p.mean_b = i++;
    p.logvar_w = i++;
    p.logvar_b = i++;
    p.dense_w = i++;
    p.dense_b = i++;
    p.dec_begin = i;
    return p;
}

void check_model(const CvaeModel& m) {
    const auto shapes = m.arch.parameter_shapes();
    if (shapes.size() != m.params.size())
        throw DimensionError("cvae: model has " + std::to_string(m.params.size()) + " parameter tensors, " +
                             "architecture needs " + std::to_string(shapes.size()));
    for (std::size_t i = 0; i < shapes.size(); ++i)
        if (shapes[i] != m.params[i].shape())
            throw DimensionError("cvae: parameter " + std::to_string(i) + " has shape " +
                                 shape_string(m.params[i].shape()) + ", expected " + shape_string(shapes[i]));
    if (!(m.input_scale > 0.0) || !std::isfinite(m.input_scale))
        throw ConfigError("cvae: input_scale must be positive and finite");
}

Tensor scaled_image(const CvaeModel& m, std::span<const double> image) {
    const std::size_t side = m.arch.input_side;
    if (image.size() != side * side)
        throw DimensionError("cvae: image has " + std::to_string(image.size()) + " values, expected " +
                             std::to_string(side * side));
    std::vector<double> v(image.begin(), image.end());
    const double inv = 1.0 / m.input_scale;
    for (auto& x : v) x *= inv;
    return Tensor({1, side, side}, std::move(v));
}

Tensor activate(const Tensor& x, Activation a) { return a == Activation::Selu ? ops::selu(x) : x; }

std::pair<Tensor, Tensor> run_encoder(const CvaeModel& m, Tensor x) {
    const auto pi = param_index(m.arch);
    for (std::size_t i = 0; i < m.arch.encoder.size(); ++i) {
        const auto& s = m.arch.encoder[i];
        x = activate(ops::conv2d(x, m.params[2 * i], m.params[2 * i + 1], s.stride, s.padding), s.activation);
        if (s.pool > 1) x = ops::max_pool2d(x, s.pool);
    }
    x = ops::leaky_relu(x.reshaped({x.size()}), m.arch.leaky_slope);
    return {ops::dense(x, m.params[pi.mean_w], m.params[pi.mean_b]),
            ops::dense(x, m.params[pi.logvar_w], m.params[pi.logvar_b])};
}

Tensor run_decoder(const CvaeModel& m, const Tensor& u) {
    const auto pi = param_index(m.arch);
    const auto& a = m.arch;
    Tensor x = ops::dense(u, m.params[pi.dense_w], m.params[pi.dense_b]).reshaped({a.seed_channels, a.seed_side, a.seed_side});
    for (std::size_t i = 0; i < a.decoder.size(); ++i) {
        const auto& s = a.decoder[i];
        x = activate(ops::conv2d_transpose(x, m.params[pi.dec_begin + 2 * i], m.params[pi.dec_begin + 2 * i + 1],
                                           s.stride, s.padding, s.output_padding),
                     s.activation);
    }
    return x;
}

}  // namespace

LatentCode encode(const CvaeModel& model, std::span<const double> image) {
    check_model(model);
    auto [mu, lv] = run_encoder(model, scaled_image(model, image));
    return LatentCode{mu.storage(), lv.storage()};
}

LatentCode encode(const CvaeModel& model, const Plume& image) {
    if (image.grid.n_lon != model.arch.input_side || image.grid.n_lat != model.arch.input_side)
        throw DimensionError("cvae encode: plume grid is " + std::to_string(image.grid.n_lon) + "x" +
                             std::to_string(image.grid.n_lat) + ", model expects side " +
                             std::to_string(model.arch.input_side));
    return encode(model, std::span<const double>(image.values));
}

std::vector<double> decode(const CvaeModel& model, std::span<const double> u) {
    check_model(model);
    if (u.size() != model.arch.latent_dim)
        throw DimensionError("cvae decode: latent vector has length " + std::to_string(u.size()) + ", expected " +
                             std::to_string(model.arch.latent_dim));
    auto out = run_decoder(model, Tensor({u.size()}, std::vector<double>(u.begin(), u.end()))).storage();
    for (auto& v : out) v *= model.input_scale;
    return out;
}

std::vector<double> sample_latent(const LatentCode& code, std::mt19937_64& rng) {
    if (code.mean.size() != code.log_variance.size())
        throw DimensionError("sample_latent: mean and log-variance lengths differ");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out(code.dim());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = code.mean[i] + std::exp(0.5 * code.log_variance[i]) * normal(rng);
    return out;
}

std::vector<double> sample_latent(const LatentCode& code, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_latent(code, rng);
}

double kl_term(const LatentCode& code) {
    if (code.mean.size() != code.log_variance.size())
        throw DimensionError("kl_term: mean and log-variance lengths differ");
    double s = 0.0;
    for (std::size_t i = 0; i < code.dim(); ++i) {
        const double lv = code.log_variance[i], mu = code.mean[i];
        s += lv + 1.0 - std::exp(lv) - mu * mu;
    }
    return -0.5 * s;
}

FrozenNoise draw_noise(std::size_t n_images, std::size_t n_draws, std::size_t r, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    FrozenNoise noise(n_images, std::vector<std::vector<double>>(n_draws, std::vector<double>(r)));
    for (auto& per_image : noise)
        for (auto& draw : per_image)
            for (auto& v : draw) v = normal(rng);
    return noise;
}

namespace {

struct ItemResult {
    double reconstruction = 0.0;
    double kl = 0.0;
    std::vector<Tensor> gradients;
};

// Loss of one image in scaled units: (1/L) sum_l |x - d(u_l)|^2 + kl_weight * KL.
ItemResult item_loss(const CvaeModel& m, const Tensor& x_scaled, const std::vector<std::vector<double>>& noise,
                     double kl_weight, bool want_gradients) {
    if (noise.empty()) throw ContractError("cvae loss: at least one latent draw per image is required");
    const auto& a = m.arch;
    const auto pi = param_index(a);
    Graph g;
    std::vector<Var> p;
    p.reserve(m.params.size());
    for (const auto& t : m.params) p.push_back(g.leaf(t, want_gradients));

    Var x = g.constant(x_scaled);
    for (std::size_t i = 0; i < a.encoder.size(); ++i) {
        const auto& s = a.encoder[i];
        x = g.conv2d(x, p[2 * i], p[2 * i + 1], s.stride, s.padding);
        if (s.activation == Activation::Selu) x = g.selu(x);
        if (s.pool > 1) x = g.max_pool2d(x, s.pool);
    }
    x = g.leaky_relu(g.reshape(x, {a.encoder_features()}), a.leaky_slope);
    const Var mu = g.dense(x, p[pi.mean_w], p[pi.mean_b]);
    const Var lv = g.dense(x, p[pi.logvar_w], p[pi.logvar_b]);
    const Var sd = g.exp(g.scale(lv, 0.5));
    const Var target = g.constant(x_scaled.reshaped({x_scaled.size()}));

    Var recon{};
    for (std::size_t l = 0; l < noise.size(); ++l) {
        if (noise[l].size() != a.latent_dim) throw DimensionError("cvae loss: noise vector has wrong length");
        const Var u = g.add(mu, g.mul(sd, g.constant(Tensor({a.latent_dim}, noise[l]))));
        Var h = g.reshape(g.dense(u, p[pi.dense_w], p[pi.dense_b]), {a.seed_channels, a.seed_side, a.seed_side});
        for (std::size_t i = 0; i < a.decoder.size(); ++i) {
            const auto& s = a.decoder[i];
            h = g.conv2d_transpose(h, p[pi.dec_begin + 2 * i], p[pi.dec_begin + 2 * i + 1], s.stride, s.padding,
                                   s.output_padding);
            if (s.activation == Activation::Selu) h = g.selu(h);
        }
        const Var err = g.sum(g.square(g.sub(g.reshape(h, {a.input_side * a.input_side}), target)));
        recon = l == 0 ? err : g.add(recon, err);
    }
    recon = g.scale(recon, 1.0 / static_cast<double>(noise.size()));
    const Var kl = g.scale(g.sum(g.sub(g.add_scalar(lv, 1.0), g.add(g.exp(lv), g.square(mu)))), -0.5);
    const Var total = g.add(recon, g.scale(kl, kl_weight));

    ItemResult r;
    r.reconstruction = g.value(recon)[0];
    r.kl = g.value(kl)[0];
    if (want_gradients) {
        g.backward(total);
        r.gradients.reserve(p.size());
        for (const auto& v : p) r.gradients.push_back(g.grad(v));
    }
    return r;
}

struct BatchResult {
    double reconstruction = 0.0;
    double kl = 0.0;
    std::vector<Tensor> gradients;
};

// Scaled-unit batch loss. Items may run in parallel; sums are taken in item order.
BatchResult batch_loss(const CvaeModel& m, const std::vector<const Tensor*>& images, const FrozenNoise& noise,
                       double kl_weight, bool want_gradients) {
    if (images.empty()) throw ContractError("cvae loss: batch must be nonempty");
    if (noise.size() != images.size()) throw DimensionError("cvae loss: noise count does not match batch size");
    const auto n = static_cast<long>(images.size());
    std::vector<ItemResult> items(images.size());
    std::vector<std::exception_ptr> errors(images.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        try {
            items[idx] = item_loss(m, *images[idx], noise[idx], kl_weight, want_gradients);
        } catch (...) {
            errors[idx] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    BatchResult out;
    for (auto& it : items) {
        out.reconstruction += it.reconstruction;
        out.kl += it.kl;
        if (want_gradients) {
            if (out.gradients.empty()) {
                out.gradients = std::move(it.gradients);
            } else {
                for (std::size_t k = 0; k < out.gradients.size(); ++k) out.gradients[k] += it.gradients[k];
            }
        }
    }
    return out;
}

std::vector<Tensor> scaled_images(const CvaeModel& m, const std::vector<std::vector<double>>& batch) {
    std::vector<Tensor> out;
    out.reserve(batch.size());
    for (const auto& b : batch) out.push_back(scaled_image(m, b));
    return out;
}

std::vector<const Tensor*> pointers(const std::vector<Tensor>& v) {
    std::vector<const Tensor*> out;
    for (const auto& t : v) out.push_back(&t);
    return out;
}

}  // namespace

LossAndGradients loss_and_gradients(const CvaeModel& model, const std::vector<std::vector<double>>& batch,
                                    const FrozenNoise& noise, double lambda) {
    check_model(model);
    const double s2 = model.input_scale * model.input_scale;
    const auto images = scaled_images(model, batch);
    auto r = batch_loss(model, pointers(images), noise, lambda / s2, true);
    LossAndGradients out;
    out.reconstruction = s2 * r.reconstruction;
    out.kl = r.kl;
    out.loss = out.reconstruction + lambda * out.kl;
    for (auto& gt : r.gradients)
        for (auto& v : gt.values()) v *= s2;
    out.gradients = std::move(r.gradients);
    return out;
}

double loss(const CvaeModel& model, const std::vector<std::vector<double>>& batch, const FrozenNoise& noise,
            double lambda) {
    check_model(model);
    const double s2 = model.input_scale * model.input_scale;
    const auto images = scaled_images(model, batch);
    const auto r = batch_loss(model, pointers(images), noise, lambda / s2, false);
    return s2 * r.reconstruction + lambda * r.kl;
}

double loss(const CvaeModel& model, const std::vector<std::vector<double>>& batch, std::size_t draws, double lambda,
            std::mt19937_64& rng) {
    return loss(model, batch, draw_noise(batch.size(), draws, model.arch.latent_dim, rng), lambda);
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (restarts == 0) throw ConfigError("train: restarts must be positive");
    if (draws == 0) throw ConfigError("train: draws (L) must be positive");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train: lambda must be nonnegative");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
}

double reconstruction_mse(const CvaeModel& model, const std::vector<std::vector<double>>& images) {
    if (images.empty()) throw DimensionError("reconstruction_mse: no images");
    double total = 0.0;
    for (const auto& b : images) total += mse(b, decode(model, encode(model, b).mean));
    return total / static_cast<double>(images.size());
}

namespace {

std::vector<std::vector<double>> image_rows(const PlumeSet& set, std::size_t side, const char* what) {
    set.check();
    if (set.grid.n_lon != side || set.grid.n_lat != side)
        throw DimensionError(std::string(what) + ": images are " + std::to_string(set.grid.n_lon) + "x" +
                             std::to_string(set.grid.n_lat) + ", architecture expects side " + std::to_string(side));
    std::vector<std::vector<double>> out;
    out.reserve(set.size());
    for (const auto& p : set.plumes) out.push_back(p.values);
    return out;
}

std::uint64_t restart_seed(std::uint64_t seed, std::size_t restart) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(restart), 0x43564145u};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace

TrainResult train(const PlumeSet& dataset, const CvaeArchitecture& arch, const TrainConfig& cfg,
                  const PlumeSet* validation) {
    cfg.validate();
    arch.validate();
    if (dataset.empty()) throw DimensionError("train: empty dataset");
    const auto raw = image_rows(dataset, arch.input_side, "train");
    std::vector<std::vector<double>> raw_validation;
    if (validation && !validation->empty()) raw_validation = image_rows(*validation, arch.input_side, "train");

    double scale = 0.0;
    for (const auto& img : raw)
        for (double v : img) scale = std::max(scale, std::abs(v));
    if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;

    TrainResult result;
    std::optional<CvaeModel> best;
    double best_mse = std::numeric_limits<double>::infinity();
    for (std::size_t restart = 0; restart < cfg.restarts; ++restart) {
        RestartHistory hist;
        hist.seed = restart_seed(cfg.seed, restart);
        CvaeModel model = init_model(arch, hist.seed, cfg.lambda);
        model.input_scale = scale;
        const auto images = scaled_images(model, raw);
        const double kl_weight = cfg.lambda / (scale * scale);
        std::mt19937_64 rng(hist.seed ^ 0x9e3779b97f4a7c15ULL);
        AdamState adam(model.params, AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
        std::vector<std::size_t> order(images.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        try {
            for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
                shuffle_indices(order, rng);
                double epoch_loss = 0.0;
                for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                    const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
                    std::vector<const Tensor*> batch;
                    for (std::size_t i = start; i < stop; ++i) batch.push_back(&images[order[i]]);
                    const auto noise = draw_noise(batch.size(), cfg.draws, arch.latent_dim, rng);
                    auto r = batch_loss(model, batch, noise, kl_weight, true);
                    const double batch_value = r.reconstruction + kl_weight * r.kl;
                    if (!std::isfinite(batch_value)) throw NumericError("non-finite loss");
                    epoch_loss += batch_value;
                    adam_step(model.params, r.gradients, adam);
                }
                hist.train_loss.push_back(epoch_loss * scale * scale);
                if (!raw_validation.empty()) hist.validation_mse.push_back(reconstruction_mse(model, raw_validation));
                if (cfg.verbose)
                    std::clog << "train: restart " << restart << " epoch " << epoch + 1 << " loss "
                              << hist.train_loss.back() << '\n';
            }
            hist.final_train_mse = reconstruction_mse(model, raw);
            if (!std::isfinite(hist.final_train_mse)) throw NumericError("non-finite reconstruction mse");
        } catch (const NumericError& e) {
            hist.aborted = true;
            hist.abort_reason = e.what();
            std::clog << "train: restart " << restart << " aborted: " << e.what() << '\n';
        }
        if (!hist.aborted && hist.final_train_mse < best_mse) {
            best_mse = hist.final_train_mse;
            best = std::move(model);
            result.best_restart = restart;
        }
        result.restarts.push_back(std::move(hist));
    }
    if (!best) throw NumericError("train: every restart aborted");
    result.model = std::move(*best);
    return result;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split: fraction must lie in (0, 1)");
    const auto n_first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (n_first < 1 || n_first >= n)
        throw DimensionError("split: " + std::to_string(n) + " plumes cannot give both parts at least one plume");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    shuffle_indices(order, rng);
    std::vector<std::size_t> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_first));
    std::vector<std::size_t> second(order.begin() + static_cast<std::ptrdiff_t>(n_first), order.end());
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());
    return {std::move(first), std::move(second)};
}

std::pair<PlumeSet, PlumeSet> split_train_validation(const PlumeSet& dataset, double fraction, std::uint64_t seed) {
    const auto [a, b] = split_indices(dataset.size(), fraction, seed);
    PlumeSet train_set{dataset.grid, {}}, validation_set{dataset.grid, {}};
    for (auto i : a) train_set.plumes.push_back(dataset.plumes[i]);
    for (auto i : b) validation_set.plumes.push_back(dataset.plumes[i]);
    return {std::move(train_set), std::move(validation_set)};
}

namespace {

constexpr const char* kCvaeMagic = "CVAE1";

std::string stage_line(const char* kind, const ConvLayerSpec& s) {
    std::ostringstream os;
    os << kind << ',' << s.in_channels << ',' << s.out_channels << ',' << s.kernel << ',' << s.stride << ','
       << s.padding << ',' << s.output_padding << ',' << (s.activation == Activation::Selu ? "selu" : "linear")
       << ',' << s.pool;
    return os.str();
}

ConvLayerSpec parse_stage(const std::string& line, const char* kind) {
    const auto f = detail::split(line, ',');
    if (f.size() != 9 || f[0] != kind) throw ConfigError(std::string("CVAE1: malformed ") + kind + " line");
    auto positive = [](const std::string& s) {
        const auto v = detail::parse_int(s, kCvaeMagic);
        if (v < 0) throw ConfigError("CVAE1: negative layer field");
        return v;
    };
    ConvLayerSpec s;
    s.in_channels = static_cast<std::size_t>(positive(f[1]));
    s.out_channels = static_cast<std::size_t>(positive(f[2]));
    s.kernel = static_cast<int>(positive(f[3]));
    s.stride = static_cast<int>(positive(f[4]));
    s.padding = static_cast<int>(positive(f[5]));
    s.output_padding = static_cast<int>(positive(f[6]));
    if (f[7] == "selu") {
        s.activation = Activation::Selu;
    } else if (f[7] == "linear") {
        s.activation = Activation::Linear;
    } else {
        throw ConfigError("CVAE1: unknown activation '" + f[7] + "'");
    }
    s.pool = static_cast<int>(positive(f[8]));
    return s;
}

std::pair<std::string, std::string> key_value(const std::string& line) {
    const auto pos = line.find(',');
    if (pos == std::string::npos) throw ConfigError("CVAE1: malformed header line '" + line + "'");
    return {line.substr(0, pos), line.substr(pos + 1)};
}

std::string expect(std::istream& is, const std::string& key) {
    auto [k, v] = key_value(detail::read_line(is, kCvaeMagic));
    if (k != key) throw ConfigError("CVAE1: expected '" + key + "', found '" + k + "'");
    return v;
}

}  // namespace

void write_cvae(std::ostream& os, const CvaeModel& model) {
    check_model(model);
    const auto& a = model.arch;
    os << kCvaeMagic << '\n';
    os << "input_side," << a.input_side << '\n';
    os << "latent_dim," << a.latent_dim << '\n';
    os << "lambda," << detail::format_double(model.lambda) << '\n';
    os << "input_scale," << detail::format_double(model.input_scale) << '\n';
    os << "leaky_slope," << detail::format_double(a.leaky_slope) << '\n';
    os << "encoder," << a.encoder.size() << '\n';
    for (const auto& s : a.encoder) os << stage_line("conv", s) << '\n';
    os << "seed," << a.seed_channels << ',' << a.seed_side << '\n';
    os << "decoder," << a.decoder.size() << '\n';
    for (const auto& s : a.decoder) os << stage_line("convt", s) << '\n';
    os << "params," << model.params.size() << '\n';
    os << "data\n";
    for (const auto& t : model.params) detail::write_f64_le(os, t.values());
    if (!os) throw ConfigError("write_cvae: stream write failed");
}

CvaeModel read_cvae(std::istream& is) {
    using detail::parse_double;
    using detail::parse_int;
    if (detail::read_line(is, kCvaeMagic) != kCvaeMagic) throw ConfigError("not a CVAE1 file (bad magic)");
    CvaeModel m;
    auto& a = m.arch;
    a.encoder.clear();
    a.decoder.clear();
    const auto side = parse_int(expect(is, "input_side"), kCvaeMagic);
    const auto r = parse_int(expect(is, "latent_dim"), kCvaeMagic);
    if (side <= 0 || r <= 0) throw ConfigError("CVAE1: invalid dimensions");
    a.input_side = static_cast<std::size_t>(side);
    a.latent_dim = static_cast<std::size_t>(r);
    m.lambda = parse_double(expect(is, "lambda"), kCvaeMagic);
    m.input_scale = parse_double(expect(is, "input_scale"), kCvaeMagic);
    a.leaky_slope = parse_double(expect(is, "leaky_slope"), kCvaeMagic);
    const auto n_enc = parse_int(expect(is, "encoder"), kCvaeMagic);
    if (n_enc < 0 || n_enc > 64) throw ConfigError("CVAE1: invalid encoder stage count");
    for (long long i = 0; i < n_enc; ++i) a.encoder.push_back(parse_stage(detail::read_line(is, kCvaeMagic), "conv"));
    const auto seed = detail::split(expect(is, "seed"), ',');
    if (seed.size() != 2) throw ConfigError("CVAE1: malformed seed line");
    const auto sc = parse_int(seed[0], kCvaeMagic), ss = parse_int(seed[1], kCvaeMagic);
    if (sc <= 0 || ss <= 0) throw ConfigError("CVAE1: invalid decoder seed");
    a.seed_channels = static_cast<std::size_t>(sc);
    a.seed_side = static_cast<std::size_t>(ss);
    const auto n_dec = parse_int(expect(is, "decoder"), kCvaeMagic);
    if (n_dec < 0 || n_dec > 64) throw ConfigError("CVAE1: invalid decoder stage count");
    for (long long i = 0; i < n_dec; ++i) a.decoder.push_back(parse_stage(detail::read_line(is, kCvaeMagic), "convt"));
    const auto shapes = a.parameter_shapes();
    if (parse_int(expect(is, "params"), kCvaeMagic) != static_cast<long long>(shapes.size()))
        throw ConfigError("CVAE1: parameter count does not match the architecture");
    if (detail::read_line(is, kCvaeMagic) != "data") throw ConfigError("CVAE1: missing data marker");
    for (const auto& shape : shapes) m.params.emplace_back(shape, detail::read_f64_le(is, shape_size(shape), kCvaeMagic));
    check_model(m);
    return m;
}

void save_cvae(const std::string& path, const CvaeModel& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open '" + path + "' for writing");
    write_cvae(os, model);
}

CvaeModel load_cvae(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open '" + path + "'");
    return read_cvae(is);
}

}  // namespace plumeemu
