#include "plumeemu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "plumeemu/error.hpp"

namespace plumeemu {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    for (auto d : shape_)
        if (d == 0) throw DimensionError("tensor shape has a zero extent: " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
        throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
}

Tensor Tensor::vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
    if (other.shape_ != shape_)
        throw DimensionError("tensor add: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

namespace ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank)
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_string(t.shape()));
}

void check_conv_args(int stride, int padding, const char* what) {
    if (stride < 1) throw DimensionError(std::string(what) + ": stride must be >= 1");
    if (padding < 0) throw DimensionError(std::string(what) + ": padding must be >= 0");
}

// Range of output positions o (0 <= o < out) such that o*stride + offset lies in [0, in).
void valid_range(long out, long in, long stride, long offset, long& lo, long& hi) {
    // o*stride + offset >= 0  ->  o >= ceil(-offset/stride)
    lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
    // o*stride + offset <= in-1  ->  o <= floor((in-1-offset)/stride)
    const long top = in - 1 - offset;
    hi = top < 0 ? -1 : std::min(out - 1, top / stride);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride, int padding) {
    require_rank(input, 3, "conv2d input");
    require_rank(kernels, 4, "conv2d kernels");
    check_conv_args(stride, padding, "conv2d");
    const long cin = static_cast<long>(input.dim(0)), h = static_cast<long>(input.dim(1)),
               w = static_cast<long>(input.dim(2));
    const long cout = static_cast<long>(kernels.dim(0)), k = static_cast<long>(kernels.dim(2));
    if (static_cast<long>(kernels.dim(1)) != cin)
        throw DimensionError("conv2d: kernels expect " + std::to_string(kernels.dim(1)) +
                             " input channels, input has " + std::to_string(cin));
    if (kernels.dim(3) != kernels.dim(2)) throw DimensionError("conv2d: kernels must be square");
    if (bias.size() != 0 && static_cast<long>(bias.size()) != cout)
        throw DimensionError("conv2d: bias length does not match output channels");
    if (k > h + 2 * padding || k > w + 2 * padding) throw DimensionError("conv2d: kernel larger than padded input");
    const long oh = (h + 2 * padding - k) / stride + 1, ow = (w + 2 * padding - k) / stride + 1;

    Tensor out({static_cast<std::size_t>(cout), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    double* po = out.data();
    const double* pi = input.data();
    const double* pk = kernels.data();
    for (long co = 0; co < cout; ++co) {
        double* oplane = po + co * oh * ow;
        const double b = bias.size() ? bias[static_cast<std::size_t>(co)] : 0.0;
        std::fill(oplane, oplane + oh * ow, b);
        for (long ci = 0; ci < cin; ++ci) {
            const double* iplane = pi + ci * h * w;
            for (long ky = 0; ky < k; ++ky) {
                long oy0, oy1;
                valid_range(oh, h, stride, ky - padding, oy0, oy1);
                for (long kx = 0; kx < k; ++kx) {
                    const double wgt = pk[((co * cin + ci) * k + ky) * k + kx];
                    long ox0, ox1;
                    valid_range(ow, w, stride, kx - padding, ox0, ox1);
                    for (long oy = oy0; oy <= oy1; ++oy) {
                        const double* irow = iplane + (oy * stride + ky - padding) * w + (kx - padding);
                        double* orow = oplane + oy * ow;
                        if (stride == 1) {
                            for (long ox = ox0; ox <= ox1; ++ox) orow[ox] += wgt * irow[ox];
                        } else {
                            for (long ox = ox0; ox <= ox1; ++ox) orow[ox] += wgt * irow[ox * stride];
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
                        int padding, int output_padding) {
    return conv2d_transpose(input, kernels, bias, stride, padding, output_padding, output_padding);
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
                        int padding, int output_padding_h, int output_padding_w) {
    require_rank(input, 3, "conv2d_transpose input");
    require_rank(kernels, 4, "conv2d_transpose kernels");
    check_conv_args(stride, padding, "conv2d_transpose");
    for (int op : {output_padding_h, output_padding_w})
        if (op < 0 || (op > 0 && op >= stride)) throw DimensionError("conv2d_transpose: output_padding out of range");
    const long cin = static_cast<long>(input.dim(0)), h = static_cast<long>(input.dim(1)),
               w = static_cast<long>(input.dim(2));
    const long cout = static_cast<long>(kernels.dim(1)), k = static_cast<long>(kernels.dim(2));
    if (static_cast<long>(kernels.dim(0)) != cin)
        throw DimensionError("conv2d_transpose: kernels expect " + std::to_string(kernels.dim(0)) +
                             " input channels, input has " + std::to_string(cin));
    if (kernels.dim(3) != kernels.dim(2)) throw DimensionError("conv2d_transpose: kernels must be square");
    if (bias.size() != 0 && static_cast<long>(bias.size()) != cout)
        throw DimensionError("conv2d_transpose: bias length does not match output channels");
    const long oh = (h - 1) * stride - 2 * padding + k + output_padding_h;
    const long ow = (w - 1) * stride - 2 * padding + k + output_padding_w;
    if (oh < 1 || ow < 1) throw DimensionError("conv2d_transpose: empty output");

    Tensor out({static_cast<std::size_t>(cout), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    double* po = out.data();
    const double* pi = input.data();
    const double* pk = kernels.data();
    for (long co = 0; co < cout; ++co) {
        double* oplane = po + co * oh * ow;
        std::fill(oplane, oplane + oh * ow, bias.size() ? bias[static_cast<std::size_t>(co)] : 0.0);
    }
    // out[co][iy*s + ky - p][ix*s + kx - p] += in[ci][iy][ix] * K[ci][co][ky][kx]
    for (long ci = 0; ci < cin; ++ci) {
        const double* iplane = pi + ci * h * w;
        for (long co = 0; co < cout; ++co) {
            double* oplane = po + co * oh * ow;
            for (long ky = 0; ky < k; ++ky) {
                long iy0, iy1;
                valid_range(h, oh, stride, ky - padding, iy0, iy1);
                for (long kx = 0; kx < k; ++kx) {
                    const double wgt = pk[((ci * cout + co) * k + ky) * k + kx];
                    long ix0, ix1;
                    valid_range(w, ow, stride, kx - padding, ix0, ix1);
                    for (long iy = iy0; iy <= iy1; ++iy) {
                        const double* irow = iplane + iy * w;
                        double* orow = oplane + (iy * stride + ky - padding) * ow + (kx - padding);
                        for (long ix = ix0; ix <= ix1; ++ix) orow[ix * stride] += wgt * irow[ix];
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, std::size_t k_, int stride,
                          int padding) {
    const long cin = static_cast<long>(input.dim(0)), h = static_cast<long>(input.dim(1)),
               w = static_cast<long>(input.dim(2));
    const long cout = static_cast<long>(grad_out.dim(0)), oh = static_cast<long>(grad_out.dim(1)),
               ow = static_cast<long>(grad_out.dim(2));
    const long k = static_cast<long>(k_);
    Tensor g({static_cast<std::size_t>(cout), static_cast<std::size_t>(cin), k_, k_});
    double* pg = g.data();
    for (long co = 0; co < cout; ++co) {
        const double* gplane = grad_out.data() + co * oh * ow;
        for (long ci = 0; ci < cin; ++ci) {
            const double* iplane = input.data() + ci * h * w;
            for (long ky = 0; ky < k; ++ky) {
                long oy0, oy1;
                valid_range(oh, h, stride, ky - padding, oy0, oy1);
                for (long kx = 0; kx < k; ++kx) {
                    long ox0, ox1;
                    valid_range(ow, w, stride, kx - padding, ox0, ox1);
                    double acc = 0.0;
                    for (long oy = oy0; oy <= oy1; ++oy) {
                        const double* irow = iplane + (oy * stride + ky - padding) * w + (kx - padding);
                        const double* grow = gplane + oy * ow;
                        for (long ox = ox0; ox <= ox1; ++ox) acc += grow[ox] * irow[ox * stride];
                    }
                    pg[((co * cin + ci) * k + ky) * k + kx] = acc;
                }
            }
        }
    }
    return g;
}

Tensor conv2d_transpose_kernel_grad(const Tensor& input, const Tensor& grad_out, std::size_t k_,
                                    int stride, int padding) {
    const long cin = static_cast<long>(input.dim(0)), h = static_cast<long>(input.dim(1)),
               w = static_cast<long>(input.dim(2));
    const long cout = static_cast<long>(grad_out.dim(0)), oh = static_cast<long>(grad_out.dim(1)),
               ow = static_cast<long>(grad_out.dim(2));
    const long k = static_cast<long>(k_);
    Tensor g({static_cast<std::size_t>(cin), static_cast<std::size_t>(cout), k_, k_});
    double* pg = g.data();
    for (long ci = 0; ci < cin; ++ci) {
        const double* iplane = input.data() + ci * h * w;
        for (long co = 0; co < cout; ++co) {
            const double* gplane = grad_out.data() + co * oh * ow;
            for (long ky = 0; ky < k; ++ky) {
                long iy0, iy1;
                valid_range(h, oh, stride, ky - padding, iy0, iy1);
                for (long kx = 0; kx < k; ++kx) {
                    long ix0, ix1;
                    valid_range(w, ow, stride, kx - padding, ix0, ix1);
                    double acc = 0.0;
                    for (long iy = iy0; iy <= iy1; ++iy) {
                        const double* irow = iplane + iy * w;
                        const double* grow = gplane + (iy * stride + ky - padding) * ow + (kx - padding);
                        for (long ix = ix0; ix <= ix1; ++ix) acc += irow[ix] * grow[ix * stride];
                    }
                    pg[((ci * cout + co) * k + ky) * k + kx] = acc;
                }
            }
        }
    }
    return g;
}

Tensor max_pool2d(const Tensor& input, int window, std::vector<std::size_t>* argmax) {
    require_rank(input, 3, "max_pool2d input");
    if (window < 1) throw DimensionError("max_pool2d: window must be >= 1");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2), win = static_cast<std::size_t>(window);
    if (h % win != 0 || w % win != 0)
        throw DimensionError("max_pool2d: window " + std::to_string(window) + " does not divide " +
                             shape_string(input.shape()));
    const std::size_t oh = h / win, ow = w / win;
    Tensor out({c, oh, ow});
    if (argmax) argmax->assign(out.size(), 0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (ch * h + oy * win) * w + ox * win;
                double best_v = input[best];
                for (std::size_t dy = 0; dy < win; ++dy)
                    for (std::size_t dx = 0; dx < win; ++dx) {
                        const std::size_t idx = (ch * h + oy * win + dy) * w + ox * win + dx;
                        if (input[idx] > best_v) {
                            best_v = input[idx];
                            best = idx;
                        }
                    }
                const std::size_t o = (ch * oh + oy) * ow + ox;
                out[o] = best_v;
                if (argmax) (*argmax)[o] = best;
            }
    return out;
}

Tensor selu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.values()) v = v > 0.0 ? kSeluScale * v : kSeluScale * kSeluAlpha * std::expm1(v);
    return y;
}

Tensor leaky_relu(const Tensor& x, double slope) {
    Tensor y = x;
    for (auto& v : y.values()) v = v >= 0.0 ? v : slope * v;
    return y;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    require_rank(weights, 2, "dense weights");
    const std::size_t m = weights.dim(0), n = weights.dim(1);
    if (input.size() != n)
        throw DimensionError("dense: input length " + std::to_string(input.size()) + " vs weights " +
                             shape_string(weights.shape()));
    if (bias.size() != m) throw DimensionError("dense: bias length does not match weights rows");
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
        double acc = bias[i];
        const double* row = weights.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) acc += row[j] * input[j];
        out[i] = acc;
    }
    return out;
}

}  // namespace ops
}  // namespace plumeemu
