#pragma once

// Differentiable kernels over (c, t, h, w) feature tensors. Every forward op
// has a matching backward that returns exact analytic gradients.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "signdiff/error.hpp"
#include "signdiff/tensor.hpp"

namespace signdiff {

/// Stride, dilation and zero padding per (t, h, w) axis. The kernel extents
/// come from the kernel tensor, shaped (c_out, c_in, kt, kh, kw).
struct ConvGeometry {
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> dilation{1, 1, 1};
    std::array<int, 3> padding{0, 0, 0};
};

struct ConvGrads {
    Tensor input;
    Tensor kernel;
    Tensor bias;
};

namespace detail {

struct ConvPlan {
    std::size_t ci, co;
    std::array<std::size_t, 3> in;    // T, H, W
    std::array<std::size_t, 3> k;     // kt, kh, kw
    std::array<std::size_t, 3> out;   // To, Ho, Wo
    ConvGeometry g;
    std::size_t rows() const { return ci * k[0] * k[1] * k[2]; }
    std::size_t positions() const { return out[0] * out[1] * out[2]; }
    bool pointwise() const {
        return k[0] == 1 && k[1] == 1 && k[2] == 1 && g.stride == std::array<int, 3>{1, 1, 1} &&
               g.padding == std::array<int, 3>{0, 0, 0};
    }
};

inline ConvPlan plan_conv(const Tensor& input, const Tensor& kernel, const ConvGeometry& g) {
    require_feature(input, "conv");
    if (kernel.rank() != 5)
        throw InvalidArgument("conv: kernel must be (c_out, c_in, kt, kh, kw), got " + shape_str(kernel.shape()));
    if (kernel.dim(1) != input.dim(0))
        throw InvalidArgument("conv: input has " + std::to_string(input.dim(0)) + " channels but kernel expects " +
                              std::to_string(kernel.dim(1)));
    ConvPlan p{};
    p.ci = input.dim(0);
    p.co = kernel.dim(0);
    p.g = g;
    for (int a = 0; a < 3; ++a) {
        if (g.stride[a] <= 0) throw InvalidArgument("conv: stride must be positive");
        if (g.dilation[a] <= 0) throw InvalidArgument("conv: dilation must be positive");
        if (g.padding[a] < 0) throw InvalidArgument("conv: padding must be non-negative");
        p.in[a] = input.dim(a + 1);
        p.k[a] = kernel.dim(a + 2);
        const long span = static_cast<long>(g.dilation[a]) * (static_cast<long>(p.k[a]) - 1) + 1;
        const long padded = static_cast<long>(p.in[a]) + 2L * g.padding[a];
        if (padded < span) throw InvalidArgument("conv: kernel footprint exceeds padded input");
        p.out[a] = static_cast<std::size_t>((padded - span) / g.stride[a] + 1);
    }
    return p;
}

// col[(i, a, b, c), (ot, oy, ox)] = input(i, ot*s + a*d - p, ...) or 0 outside.
inline std::vector<double> im2col(const Tensor& input, const ConvPlan& p) {
    const std::size_t P = p.positions();
    std::vector<double> col(p.rows() * P, 0.0);
    const auto [T, H, W] = p.in;
    const auto [To, Ho, Wo] = p.out;
    const double* src = input.data().data();
    std::size_t r = 0;
    for (std::size_t i = 0; i < p.ci; ++i)
        for (std::size_t a = 0; a < p.k[0]; ++a)
            for (std::size_t b = 0; b < p.k[1]; ++b)
                for (std::size_t c = 0; c < p.k[2]; ++c, ++r) {
                    double* row = col.data() + r * P;
                    for (std::size_t ot = 0; ot < To; ++ot) {
                        const long it = static_cast<long>(ot) * p.g.stride[0] +
                                        static_cast<long>(a) * p.g.dilation[0] - p.g.padding[0];
                        if (it < 0 || it >= static_cast<long>(T)) continue;
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const long iy = static_cast<long>(oy) * p.g.stride[1] +
                                            static_cast<long>(b) * p.g.dilation[1] - p.g.padding[1];
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            const double* line = src + ((i * T + static_cast<std::size_t>(it)) * H +
                                                        static_cast<std::size_t>(iy)) * W;
                            double* dst = row + (ot * Ho + oy) * Wo;
                            for (std::size_t ox = 0; ox < Wo; ++ox) {
                                const long ix = static_cast<long>(ox) * p.g.stride[2] +
                                                static_cast<long>(c) * p.g.dilation[2] - p.g.padding[2];
                                if (ix >= 0 && ix < static_cast<long>(W)) dst[ox] = line[ix];
                            }
                        }
                    }
                }
    return col;
}

inline void col2im(const std::vector<double>& col, const ConvPlan& p, Tensor& grad_input) {
    const std::size_t P = p.positions();
    const auto [T, H, W] = p.in;
    const auto [To, Ho, Wo] = p.out;
    double* dst = grad_input.data().data();
    std::size_t r = 0;
    for (std::size_t i = 0; i < p.ci; ++i)
        for (std::size_t a = 0; a < p.k[0]; ++a)
            for (std::size_t b = 0; b < p.k[1]; ++b)
                for (std::size_t c = 0; c < p.k[2]; ++c, ++r) {
                    const double* row = col.data() + r * P;
                    for (std::size_t ot = 0; ot < To; ++ot) {
                        const long it = static_cast<long>(ot) * p.g.stride[0] +
                                        static_cast<long>(a) * p.g.dilation[0] - p.g.padding[0];
                        if (it < 0 || it >= static_cast<long>(T)) continue;
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const long iy = static_cast<long>(oy) * p.g.stride[1] +
                                            static_cast<long>(b) * p.g.dilation[1] - p.g.padding[1];
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            double* line = dst + ((i * T + static_cast<std::size_t>(it)) * H +
                                                  static_cast<std::size_t>(iy)) * W;
                            const double* s = row + (ot * Ho + oy) * Wo;
                            for (std::size_t ox = 0; ox < Wo; ++ox) {
                                const long ix = static_cast<long>(ox) * p.g.stride[2] +
                                                static_cast<long>(c) * p.g.dilation[2] - p.g.padding[2];
                                if (ix >= 0 && ix < static_cast<long>(W)) line[ix] += s[ox];
                            }
                        }
                    }
                }
}

}  // namespace detail

/// General strided/dilated 3D convolution with zero padding. `bias` may be an
/// empty tensor.
inline Tensor conv_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias, const ConvGeometry& g) {
    const auto p = detail::plan_conv(input, kernel, g);
    if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != p.co))
        throw InvalidArgument("conv: bias must have shape (c_out)");
    const std::size_t K = p.rows();
    const std::size_t P = p.positions();
    std::vector<double> scratch;
    const double* col = input.data().data();
    if (!p.pointwise()) {
        scratch = detail::im2col(input, p);
        col = scratch.data();
    }
    Tensor out({p.co, p.out[0], p.out[1], p.out[2]});
    const double* w = kernel.data().data();
    for (std::size_t o = 0; o < p.co; ++o) {
        double* dst = out.data().data() + o * P;
        if (!bias.empty())
            for (std::size_t q = 0; q < P; ++q) dst[q] = bias[o];
        for (std::size_t k = 0; k < K; ++k) {
            const double wk = w[o * K + k];
            const double* src = col + k * P;
            for (std::size_t q = 0; q < P; ++q) dst[q] += wk * src[q];
        }
    }
    return out;
}

inline ConvGrads conv_backward(const Tensor& input, const Tensor& kernel, const ConvGeometry& g,
                               const Tensor& grad_out, bool need_input_grad = true) {
    const auto p = detail::plan_conv(input, kernel, g);
    const Shape expected{p.co, p.out[0], p.out[1], p.out[2]};
    if (grad_out.shape() != expected)
        throw InvalidArgument("conv backward: upstream gradient " + shape_str(grad_out.shape()) +
                              " does not match output " + shape_str(expected));
    const std::size_t K = p.rows();
    const std::size_t P = p.positions();
    std::vector<double> scratch;
    const double* col = input.data().data();
    if (!p.pointwise()) {
        scratch = detail::im2col(input, p);
        col = scratch.data();
    }
    const double* go = grad_out.data().data();
    const double* w = kernel.data().data();

    ConvGrads grads{Tensor(), Tensor::zeros_like(kernel), Tensor({p.co})};
    for (std::size_t o = 0; o < p.co; ++o) {
        const double* gr = go + o * P;
        double acc = 0.0;
        for (std::size_t q = 0; q < P; ++q) acc += gr[q];
        grads.bias[o] = acc;
        for (std::size_t k = 0; k < K; ++k) {
            const double* src = col + k * P;
            double s = 0.0;
            for (std::size_t q = 0; q < P; ++q) s += gr[q] * src[q];
            grads.kernel[o * K + k] = s;
        }
    }
    if (need_input_grad) {
        grads.input = Tensor::zeros_like(input);
        if (p.pointwise()) {
            double* gi = grads.input.data().data();
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t o = 0; o < p.co; ++o) {
                    const double wk = w[o * K + k];
                    const double* gr = go + o * P;
                    for (std::size_t q = 0; q < P; ++q) gi[k * P + q] += wk * gr[q];
                }
        } else {
            std::vector<double> gcol(K * P, 0.0);
            for (std::size_t k = 0; k < K; ++k) {
                double* gc = gcol.data() + k * P;
                for (std::size_t o = 0; o < p.co; ++o) {
                    const double wk = w[o * K + k];
                    const double* gr = go + o * P;
                    for (std::size_t q = 0; q < P; ++q) gc[q] += wk * gr[q];
                }
            }
            detail::col2im(gcol, p, grads.input);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Activations

inline Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

// Gradient through ReLU given the pre-activation.
inline Tensor relu_backward(const Tensor& pre, const Tensor& grad) {
    pre.check_same(grad, "relu_backward");
    Tensor g = grad;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(pre[i] > 0.0)) g[i] = 0.0;
    return g;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Tensor silu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data()) v = v * sigmoid(v);
    return y;
}

inline Tensor silu_backward(const Tensor& pre, const Tensor& grad) {
    pre.check_same(grad, "silu_backward");
    Tensor g = grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = sigmoid(pre[i]);
        g[i] *= s * (1.0 + pre[i] * (1.0 - s));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Spatial resampling (per frame, factor 2)

inline Tensor avg_pool2(const Tensor& x) {
    require_feature(x, "avg_pool2");
    require(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, "avg_pool2: spatial extents must be even");
    const std::size_t C = x.dim(0), T = x.dim(1), H = x.dim(2) / 2, W = x.dim(3) / 2;
    Tensor y({C, T, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j)
                    y.at(c, t, i, j) = 0.25 * (x.at(c, t, 2 * i, 2 * j) + x.at(c, t, 2 * i, 2 * j + 1) +
                                               x.at(c, t, 2 * i + 1, 2 * j) + x.at(c, t, 2 * i + 1, 2 * j + 1));
    return y;
}

inline Tensor avg_pool2_backward(const Tensor& grad, const Shape& input_shape) {
    Tensor gx(input_shape);
    for (std::size_t c = 0; c < grad.dim(0); ++c)
        for (std::size_t t = 0; t < grad.dim(1); ++t)
            for (std::size_t i = 0; i < grad.dim(2); ++i)
                for (std::size_t j = 0; j < grad.dim(3); ++j) {
                    const double g = 0.25 * grad.at(c, t, i, j);
                    gx.at(c, t, 2 * i, 2 * j) += g;
                    gx.at(c, t, 2 * i, 2 * j + 1) += g;
                    gx.at(c, t, 2 * i + 1, 2 * j) += g;
                    gx.at(c, t, 2 * i + 1, 2 * j + 1) += g;
                }
    return gx;
}

inline Tensor upsample2(const Tensor& x) {
    require_feature(x, "upsample2");
    const std::size_t C = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y({C, T, 2 * H, 2 * W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < 2 * H; ++i)
                for (std::size_t j = 0; j < 2 * W; ++j) y.at(c, t, i, j) = x.at(c, t, i / 2, j / 2);
    return y;
}

inline Tensor upsample2_backward(const Tensor& grad) {
    require_feature(grad, "upsample2_backward");
    const std::size_t C = grad.dim(0), T = grad.dim(1), H = grad.dim(2) / 2, W = grad.dim(3) / 2;
    Tensor gx({C, T, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < 2 * H; ++i)
                for (std::size_t j = 0; j < 2 * W; ++j) gx.at(c, t, i / 2, j / 2) += grad.at(c, t, i, j);
    return gx;
}

// ---------------------------------------------------------------------------
// Per-channel vectors

// x(c, ...) += v(c)
inline void add_channel_vector(Tensor& x, const Tensor& v) {
    require_feature(x, "add_channel_vector");
    require(v.rank() == 1 && v.dim(0) == x.dim(0), "add_channel_vector: vector length must equal channel count");
    const std::size_t plane = x.size() / x.dim(0);
    for (std::size_t c = 0; c < x.dim(0); ++c)
        for (std::size_t i = 0; i < plane; ++i) x[c * plane + i] += v[c];
}

// x(c, ...) *= v(c)
inline void scale_channels(Tensor& x, const Tensor& v) {
    require_feature(x, "scale_channels");
    require(v.rank() == 1 && v.dim(0) == x.dim(0), "scale_channels: vector length must equal channel count");
    const std::size_t plane = x.size() / x.dim(0);
    for (std::size_t c = 0; c < x.dim(0); ++c)
        for (std::size_t i = 0; i < plane; ++i) x[c * plane + i] *= v[c];
}

inline Tensor channel_sums(const Tensor& g) {
    require_feature(g, "channel_sums");
    const std::size_t plane = g.size() / g.dim(0);
    Tensor s({g.dim(0)});
    for (std::size_t c = 0; c < g.dim(0); ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += g[c * plane + i];
        s[c] = acc;
    }
    return s;
}

inline Tensor global_mean(const Tensor& x) {
    Tensor s = channel_sums(x);
    s *= 1.0 / static_cast<double>(x.size() / x.dim(0));
    return s;
}

inline Tensor global_mean_backward(const Tensor& grad, const Shape& input_shape) {
    Tensor gx(input_shape);
    const std::size_t plane = gx.size() / gx.dim(0);
    for (std::size_t c = 0; c < gx.dim(0); ++c)
        for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] = grad[c] / static_cast<double>(plane);
    return gx;
}

// ---------------------------------------------------------------------------
// Dense layer on vectors: y = W x + b with W shaped (out, in).

struct LinearGrads {
    Tensor weight;
    Tensor bias;
    Tensor input;
};

inline Tensor linear(const Tensor& weight, const Tensor& bias, const Tensor& x) {
    require(weight.rank() == 2 && x.rank() == 1 && weight.dim(1) == x.dim(0), "linear: shape mismatch");
    Tensor y({weight.dim(0)});
    for (std::size_t o = 0; o < weight.dim(0); ++o) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t i = 0; i < x.dim(0); ++i) acc += weight[o * x.dim(0) + i] * x[i];
        y[o] = acc;
    }
    return y;
}

inline LinearGrads linear_backward(const Tensor& weight, const Tensor& x, const Tensor& grad) {
    LinearGrads g{Tensor::zeros_like(weight), grad, Tensor::zeros_like(x)};
    const std::size_t in = x.dim(0);
    for (std::size_t o = 0; o < weight.dim(0); ++o)
        for (std::size_t i = 0; i < in; ++i) {
            g.weight[o * in + i] = grad[o] * x[i];
            g.input[i] += weight[o * in + i] * grad[o];
        }
    return g;
}

}  // namespace signdiff
