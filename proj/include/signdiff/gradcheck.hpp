#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "signdiff/error.hpp"

namespace signdiff {

using ScalarFunction = std::function<double(std::span<const double>)>;

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_coordinate = 0;
    std::size_t coordinates_checked = 0;
};

/// Compares an analytic gradient to central differences.
///
/// Error per coordinate is |analytic - fd| / max(1, |fd|). `coordinates`
/// restricts the check to a subset; empty means every coordinate.
inline GradCheckResult finite_diff_check(const ScalarFunction& f, std::span<const double> point,
                                         std::span<const double> analytic, double step,
                                         std::span<const std::size_t> coordinates = {}) {
    require(step > 0.0, "finite_diff_check: step must be positive");
    require(point.size() == analytic.size(), "finite_diff_check: gradient length differs from point");
    std::vector<std::size_t> all;
    if (coordinates.empty()) {
        all.resize(point.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        coordinates = all;
    }

    std::vector<double> x(point.begin(), point.end());
    auto eval = [&](const char* where) {
        const double v = f(x);
        if (!std::isfinite(v)) throw NonFiniteError(std::string("finite_diff_check: non-finite value at ") + where);
        return v;
    };

    GradCheckResult result;
    for (std::size_t i : coordinates) {
        require(i < x.size(), "finite_diff_check: coordinate out of range");
        const double saved = x[i];
        x[i] = saved + step;
        const double up = eval("x+h");
        x[i] = saved - step;
        const double down = eval("x-h");
        x[i] = saved;
        const double fd = (up - down) / (2.0 * step);
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
        if (err > result.max_relative_error || result.coordinates_checked == 0) {
            result.max_relative_error = std::max(result.max_relative_error, err);
            if (err >= result.max_relative_error) result.worst_coordinate = i;
        }
        ++result.coordinates_checked;
    }
    return result;
}

}  // namespace signdiff
