#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "fewshot/autograd.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor t(shape);
    for (double& v : t.values())
        v = rng.uniform(lo, hi);
    return t;
}

inline Parameter random_parameter(std::string name, const Shape& shape, Rng& rng, double scale = 1.0)
{
    return Parameter{std::move(name), random_tensor(shape, rng, -scale, scale), true};
}

/// Central differences of `f` with respect to every entry of `x` (modified in place and restored).
inline Tensor numeric_gradient(const std::function<double()>& f, Tensor& x, double step = 1e-5)
{
    Tensor g = Tensor::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + step;
        const double up = f();
        x[i] = keep - step;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

/// max_i |a_i − n_i| / max(|a_i|, |n_i|, floor).
inline double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-6)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i];
        const double n = numeric[i];
        worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
    }
    return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("fewshot_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fewshot::testing
