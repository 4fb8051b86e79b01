#pragma once

#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace plumeemu {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor vector(std::vector<double> v);

    const Shape& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Same data, new shape of equal element count.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const;
    void fill(double v);
    Tensor& operator+=(const Tensor& other);

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Glorot-uniform initialization in [-sqrt(6/(fan_in+fan_out)), +sqrt(...)].
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

namespace ops {

inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluScale = 1.0507009873554805;

/// Cross-correlation. input [C_in,H,W], kernels [C_out,C_in,k,k], bias [C_out].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride, int padding);

/// Adjoint of conv2d with respect to its input.
/// input [C_in,H,W], kernels [C_in,C_out,k,k], bias [C_out] (may be empty).
/// Output side is (H-1)*stride - 2*padding + k + output_padding.
Tensor conv2d_transpose(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
                        int padding, int output_padding = 0);
/// As above with separate output padding for rows and columns.
Tensor conv2d_transpose(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
                        int padding, int output_padding_h, int output_padding_w);

/// Gradient of conv2d with respect to the kernels.
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, std::size_t k, int stride,
                          int padding);

/// Gradient of conv2d_transpose with respect to the kernels.
Tensor conv2d_transpose_kernel_grad(const Tensor& input, const Tensor& grad_out, std::size_t k,
                                    int stride, int padding);

/// Non-overlapping max pool. `argmax` (optional) receives the flat input index of each
/// output's maximum, first row-major occurrence on ties.
Tensor max_pool2d(const Tensor& input, int window, std::vector<std::size_t>* argmax = nullptr);

Tensor selu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);

/// weights [m,n] times input [n] plus bias [m].
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

}  // namespace ops
}  // namespace plumeemu
