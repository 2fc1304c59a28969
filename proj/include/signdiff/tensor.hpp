#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "signdiff/error.hpp"

namespace signdiff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ')';
    return os.str();
}

/// Dense row-major array of doubles.
///
/// Feature maps are rank 4 with layout (channels, time, height, width);
/// single images are rank 3 (channels, height, width). Every extent is
/// positive and `size() == product(shape())` always holds.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        require(data_.size() == shape_size(shape_),
                "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& vec() noexcept { return data_; }
    const std::vector<double>& vec() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // Rank-4 (c, t, h, w) element access.
    double& at(std::size_t c, std::size_t t, std::size_t y, std::size_t x) noexcept {
        return data_[((c * shape_[1] + t) * shape_[2] + y) * shape_[3] + x];
    }
    double at(std::size_t c, std::size_t t, std::size_t y, std::size_t x) const noexcept {
        return data_[((c * shape_[1] + t) * shape_[2] + y) * shape_[3] + x];
    }

    // Same storage, new shape with equal element count.
    Tensor reshaped(Shape shape) const& {
        require(shape_size(shape) == data_.size(),
                "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }
    Tensor reshaped(Shape shape) && {
        require(shape_size(shape) == data_.size(),
                "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), std::move(data_));
    }

    void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

    Tensor& operator+=(const Tensor& other) {
        check_same(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& other) {
        check_same(other, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
        return *this;
    }
    Tensor& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    // this += alpha * other
    Tensor& axpy(double alpha, const Tensor& other) {
        check_same(other, "axpy");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, double s) { return a *= s; }
    friend Tensor operator*(double s, Tensor a) { return a *= s; }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    void check_same(const Tensor& other, const char* what) const {
        if (shape_ != other.shape_)
            throw InvalidArgument(std::string("shape mismatch in ") + what + ": " + shape_str(shape_) +
                                  " vs " + shape_str(other.shape_));
    }

private:
    void validate_shape() const {
        for (std::size_t e : shape_) require(e > 0, "tensor extents must be positive, got " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

inline bool all_finite(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

inline const Tensor& require_finite(const Tensor& t, const std::string& what) {
    if (!all_finite(t)) throw NonFiniteError("non-finite value produced by " + what);
    return t;
}

inline double sum(const Tensor& t) { return std::accumulate(t.data().begin(), t.data().end(), 0.0); }

inline double mean(const Tensor& t) { return t.empty() ? 0.0 : sum(t) / static_cast<double>(t.size()); }

inline double dot(const Tensor& a, const Tensor& b) {
    a.check_same(b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data()) m = std::max(m, std::abs(v));
    return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    a.check_same(b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double mean_squared_error(const Tensor& a, const Tensor& b) {
    a.check_same(b, "mean_squared_error");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

// Rank-4 helpers. A rank-3 image (c, h, w) is viewed as (c, 1, h, w).
inline Tensor as_clip(const Tensor& t) {
    if (t.rank() == 4) return t;
    require(t.rank() == 3, "expected a rank-3 image or rank-4 clip, got " + shape_str(t.shape()));
    return t.reshaped({t.dim(0), 1, t.dim(1), t.dim(2)});
}

inline void require_feature(const Tensor& t, const char* what) {
    if (t.rank() != 4)
        throw InvalidArgument(std::string(what) + ": expected (c, t, h, w) tensor, got " + shape_str(t.shape()));
}

inline Tensor concat_channels(std::initializer_list<const Tensor*> parts) {
    require(parts.size() > 0, "concat_channels: no inputs");
    const Tensor& first = **parts.begin();
    require_feature(first, "concat_channels");
    std::size_t channels = 0;
    for (const Tensor* p : parts) {
        require_feature(*p, "concat_channels");
        require(p->dim(1) == first.dim(1) && p->dim(2) == first.dim(2) && p->dim(3) == first.dim(3),
                "concat_channels: spatial/temporal extents differ: " + shape_str(first.shape()) + " vs " +
                    shape_str(p->shape()));
        channels += p->dim(0);
    }
    Tensor out({channels, first.dim(1), first.dim(2), first.dim(3)});
    auto dst = out.vec().begin();
    for (const Tensor* p : parts) dst = std::copy(p->vec().begin(), p->vec().end(), dst);
    return out;
}

inline Tensor slice_channels(const Tensor& t, std::size_t begin, std::size_t count) {
    require_feature(t, "slice_channels");
    require(begin + count <= t.dim(0) && count > 0, "slice_channels: range out of bounds");
    const std::size_t plane = t.dim(1) * t.dim(2) * t.dim(3);
    Tensor out({count, t.dim(1), t.dim(2), t.dim(3)});
    std::copy_n(t.vec().begin() + static_cast<std::ptrdiff_t>(begin * plane), count * plane, out.vec().begin());
    return out;
}

inline Tensor slice_frames(const Tensor& t, std::size_t begin, std::size_t count) {
    require_feature(t, "slice_frames");
    require(begin + count <= t.dim(1) && count > 0, "slice_frames: range out of bounds");
    const std::size_t frame = t.dim(2) * t.dim(3);
    Tensor out({t.dim(0), count, t.dim(2), t.dim(3)});
    for (std::size_t c = 0; c < t.dim(0); ++c) {
        auto src = t.vec().begin() + static_cast<std::ptrdiff_t>((c * t.dim(1) + begin) * frame);
        std::copy_n(src, count * frame, out.vec().begin() + static_cast<std::ptrdiff_t>(c * count * frame));
    }
    return out;
}

// dst[:, begin:begin+src.t] += src
inline void accumulate_frames(Tensor& dst, std::size_t begin, const Tensor& src) {
    require_feature(dst, "accumulate_frames");
    require_feature(src, "accumulate_frames");
    require(src.dim(0) == dst.dim(0) && src.dim(2) == dst.dim(2) && src.dim(3) == dst.dim(3) &&
                begin + src.dim(1) <= dst.dim(1),
            "accumulate_frames: incompatible shapes");
    const std::size_t frame = dst.dim(2) * dst.dim(3);
    const std::size_t count = src.dim(1);
    for (std::size_t c = 0; c < dst.dim(0); ++c)
        for (std::size_t i = 0; i < count * frame; ++i)
            dst[(c * dst.dim(1) + begin) * frame + i] += src[c * count * frame + i];
}

}  // namespace signdiff
