#pragma once

// Parameter blocks shared by every module, plus the two convolutions named in
// the aggregation module: the 3x3x3 dilated conv and the 1x1 channel mix.

#include <cmath>
#include <string>

#include "signdiff/kernels.hpp"
#include "signdiff/rng.hpp"

namespace signdiff {

/// 3x3x3 kernel, shape-preserving through zero padding of width `dilation`.
struct Conv3dParams {
    Tensor kernel;  // (c_out, c_in, 3, 3, 3)
    Tensor bias;    // (c_out)
    int dilation = 1;
};

/// General conv weights; geometry is fixed by the call site.
struct ConvParams {
    Tensor kernel;  // (c_out, c_in, kt, kh, kw)
    Tensor bias;    // (c_out)
};

/// Dense or 1x1 weights shaped (c_out, c_in).
struct LinearParams {
    Tensor weight;
    Tensor bias;
};

inline double fan_in_bound(const Tensor& kernel) {
    return 1.0 / std::sqrt(static_cast<double>(kernel.size() / kernel.dim(0)));
}

inline Tensor init_uniform_fan_in(Shape shape, Rng& rng) {
    Tensor k(std::move(shape));
    const double bound = fan_in_bound(k);
    for (double& v : k.data()) v = rng.uniform(-bound, bound);
    return k;
}

inline Conv3dParams make_conv3d(std::size_t c_out, std::size_t c_in, int dilation, Rng& rng) {
    return {init_uniform_fan_in({c_out, c_in, 3, 3, 3}, rng), Tensor({c_out}), dilation};
}

inline ConvParams make_conv(std::size_t c_out, std::size_t c_in, std::size_t kt, std::size_t kh, std::size_t kw,
                            Rng& rng) {
    return {init_uniform_fan_in({c_out, c_in, kt, kh, kw}, rng), Tensor({c_out})};
}

inline LinearParams make_linear(std::size_t c_out, std::size_t c_in, Rng& rng) {
    return {init_uniform_fan_in({c_out, c_in}, rng), Tensor({c_out})};
}

inline LinearParams zero_linear(std::size_t c_out, std::size_t c_in) {
    return {Tensor({c_out, c_in}), Tensor({c_out})};
}

inline ConvGeometry dilated_geometry(int d) { return {{1, 1, 1}, {d, d, d}, {d, d, d}}; }

inline void check_conv3d(const Tensor& input, const Conv3dParams& p) {
    if (p.dilation <= 0) throw InvalidArgument("conv3d_dilated: dilation must be positive, got " +
                                               std::to_string(p.dilation));
    if (p.kernel.rank() != 5 || p.kernel.dim(2) != 3 || p.kernel.dim(3) != 3 || p.kernel.dim(4) != 3)
        throw InvalidArgument("conv3d_dilated: kernel must be (c_out, c_in, 3, 3, 3), got " +
                              shape_str(p.kernel.shape()));
    require_feature(input, "conv3d_dilated");
    if (input.dim(0) != p.kernel.dim(1))
        throw InvalidArgument("conv3d_dilated: input channels " + std::to_string(input.dim(0)) +
                              " != kernel c_in " + std::to_string(p.kernel.dim(1)));
}

/// out(o) = sum over t in {-1,0,1}^3 of in(o + d*t) * k(t) + bias, with taps
/// outside the input reading zero.
inline Tensor conv3d_dilated(const Tensor& input, const Conv3dParams& p) {
    check_conv3d(input, p);
    return require_finite(conv_forward(input, p.kernel, p.bias, dilated_geometry(p.dilation)), "conv3d_dilated");
}

inline ConvGrads conv3d_dilated_backward(const Tensor& input, const Conv3dParams& p, const Tensor& upstream,
                                         bool need_input_grad = true) {
    check_conv3d(input, p);
    return conv_backward(input, p.kernel, dilated_geometry(p.dilation), upstream, need_input_grad);
}

inline Tensor as_pointwise_kernel(const Tensor& weights) {
    require(weights.rank() == 2, "conv1x1: weights must be (c_out, c_in), got " + shape_str(weights.shape()));
    return weights.reshaped({weights.dim(0), weights.dim(1), 1, 1, 1});
}

inline Tensor conv1x1(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    require_feature(input, "conv1x1");
    if (weights.rank() != 2 || weights.dim(1) != input.dim(0))
        throw InvalidArgument("conv1x1: weights " + shape_str(weights.shape()) + " incompatible with input " +
                              shape_str(input.shape()));
    return require_finite(conv_forward(input, as_pointwise_kernel(weights), bias, {}), "conv1x1");
}

inline Tensor conv1x1(const Tensor& input, const LinearParams& p) { return conv1x1(input, p.weight, p.bias); }

// Kernel gradient comes back shaped like `weights`.
inline ConvGrads conv1x1_backward(const Tensor& input, const Tensor& weights, const Tensor& upstream,
                                  bool need_input_grad = true) {
    require_feature(input, "conv1x1");
    if (weights.rank() != 2 || weights.dim(1) != input.dim(0))
        throw InvalidArgument("conv1x1: weights incompatible with input");
    auto g = conv_backward(input, as_pointwise_kernel(weights), {}, upstream, need_input_grad);
    g.kernel = std::move(g.kernel).reshaped(weights.shape());
    return g;
}

// Per-frame 3x3 spatial conv (kernel (c_out, c_in, 1, 3, 3)), padding 1.
inline ConvGeometry spatial_geometry(int stride) { return {{1, stride, stride}, {1, 1, 1}, {0, 1, 1}}; }

// Temporal conv along t only (kernel (c_out, c_in, 3, 1, 1)), padding 1.
inline ConvGeometry temporal_geometry() { return {{1, 1, 1}, {1, 1, 1}, {1, 0, 0}}; }

}  // namespace signdiff
