#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plumeemu/plume.hpp"
#include "plumeemu/tensor.hpp"

namespace plumeemu {

enum class Activation { Linear, Selu };

/// One convolutional stage. Encoder stages are conv2d followed by the activation and
/// an optional max pool; decoder stages are conv2d_transpose followed by the activation.
struct ConvLayerSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    int output_padding = 0;
    Activation activation = Activation::Selu;
    /// Max-pool window after the activation; 1 disables pooling.
    int pool = 1;
};

/// Every size of the network lives here, so the architecture can be revised
/// without code changes.
struct CvaeArchitecture {
    std::size_t input_side = 64;
    std::size_t latent_dim = 20;
    std::vector<ConvLayerSpec> encoder;
    /// Slope of the leaky relu applied to the flattened encoder output before both heads.
    double leaky_slope = 0.3;
    /// The decoder's dense layer maps the latent vector to seed_channels x seed_side x seed_side.
    std::size_t seed_channels = 64;
    std::size_t seed_side = 1;
    std::vector<ConvLayerSpec> decoder;

    /// Six conv + pool stages (8,16,32,32,64,64 channels) down to 64x1x1, dense heads,
    /// dense seed 64x1x1, six stride-2 transposed convolutions (64,32,32,16,8,1 channels).
    static CvaeArchitecture standard(std::size_t latent_dim, std::size_t input_side = 64);
    /// Two conv + pool stages for an 8x8 input, mirrored by two transposed convolutions.
    static CvaeArchitecture miniature(std::size_t latent_dim = 2);

    /// Flattened encoder output length.
    std::size_t encoder_features() const;
    /// Throws ConfigError when stage shapes do not chain or the decoder does not
    /// reproduce the input side.
    void validate() const;
    /// Shapes of all parameter tensors in storage order.
    std::vector<Shape> parameter_shapes() const;
};

struct LatentCode {
    std::vector<double> mean;
    std::vector<double> log_variance;

    std::size_t dim() const { return mean.size(); }
};

struct CvaeModel {
    CvaeArchitecture arch;
    /// Storage order: encoder (kernel, bias) per stage; mean head (W, b); log-variance
    /// head (W, b); decoder dense (W, b); decoder (kernel, bias) per stage.
    std::vector<Tensor> params;
    double lambda = 1e-9;
    /// Images are divided by this before encoding and decoder outputs multiplied by it.
    double input_scale = 1.0;

    std::size_t latent_dim() const { return arch.latent_dim; }
    std::size_t input_side() const { return arch.input_side; }
};

/// Glorot-uniform weights and zero biases.
CvaeModel init_model(const CvaeArchitecture& arch, std::uint64_t seed, double lambda = 1e-9);

/// Image values in row-major order, input_side x input_side.
LatentCode encode(const CvaeModel& model, std::span<const double> image);
LatentCode encode(const CvaeModel& model, const Plume& image);
std::vector<double> decode(const CvaeModel& model, std::span<const double> u);

/// mean + exp(log_variance / 2) * standard normal noise.
std::vector<double> sample_latent(const LatentCode& code, std::mt19937_64& rng);
std::vector<double> sample_latent(const LatentCode& code, std::uint64_t seed);

/// Closed-form KL(q || N(0, I)).
double kl_term(const LatentCode& code);

/// noise[i][l] is the standard-normal vector for image i, draw l.
using FrozenNoise = std::vector<std::vector<std::vector<double>>>;

FrozenNoise draw_noise(std::size_t n_images, std::size_t n_draws, std::size_t r, std::mt19937_64& rng);

/// Sum over images of (1/L) sum_l |b_i - d(u_il)|^2 + lambda KL_i, in the units of the images.
double loss(const CvaeModel& model, const std::vector<std::vector<double>>& batch, const FrozenNoise& noise,
            double lambda);
double loss(const CvaeModel& model, const std::vector<std::vector<double>>& batch, std::size_t draws,
            double lambda, std::mt19937_64& rng);

struct LossAndGradients {
    double loss = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
    /// Mirrors model.params.
    std::vector<Tensor> gradients;
};

LossAndGradients loss_and_gradients(const CvaeModel& model, const std::vector<std::vector<double>>& batch,
                                    const FrozenNoise& noise, double lambda);

struct TrainConfig {
    std::size_t epochs = 500;
    std::size_t restarts = 10;
    std::size_t batch_size = 64;
    std::size_t draws = 1;
    double lambda = 1e-9;
    std::uint64_t seed = 0;
    double learning_rate = 1e-3;
    bool verbose = false;

    void validate() const;
};

struct RestartHistory {
    std::uint64_t seed = 0;
    bool aborted = false;
    std::string abort_reason;
    /// Per-epoch training loss, in image units.
    std::vector<double> train_loss;
    /// Per-epoch mean-decode reconstruction mse on the validation set (empty without one).
    std::vector<double> validation_mse;
    double final_train_mse = 0.0;
};

struct TrainResult {
    CvaeModel model;
    std::size_t best_restart = 0;
    std::vector<RestartHistory> restarts;
};

/// Images must share one square grid matching arch.input_side. The validation set is
/// only monitored. Throws NumericError when every restart aborts.
TrainResult train(const PlumeSet& dataset, const CvaeArchitecture& arch, const TrainConfig& cfg,
                  const PlumeSet* validation = nullptr);

/// Mean over images of mse(b, decode(encode(b).mean)).
double reconstruction_mse(const CvaeModel& model, const std::vector<std::vector<double>>& images);

/// Seeded shuffle into disjoint parts of round(fraction * N) and the rest.
std::pair<PlumeSet, PlumeSet> split_train_validation(const PlumeSet& dataset, double fraction, std::uint64_t seed);
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed);

/// CVAE1 checkpoint: text architecture table, then little-endian float64 weight blocks.
void write_cvae(std::ostream& os, const CvaeModel& model);
CvaeModel read_cvae(std::istream& is);
void save_cvae(const std::string& path, const CvaeModel& model);
CvaeModel load_cvae(const std::string& path);

}  // namespace plumeemu
