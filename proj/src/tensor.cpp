#include "fewshot/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "fewshot/error.hpp"

namespace fewshot {

std::string shape_string(const Shape& shape)
{
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            out += "x";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (int d : shape) {
        require(d >= 0, ErrorKind::ShapeMismatch, "negative dimension in " + shape_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    require(data_.size() == shape_numel(shape_), ErrorKind::ShapeMismatch,
            "data size " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
}

Tensor Tensor::reshaped(Shape shape) const
{
    require(shape_numel(shape) == data_.size(), ErrorKind::ShapeMismatch,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value)
{
    std::fill(data_.begin(), data_.end(), value);
}

Tensor& Tensor::operator+=(const Tensor& other)
{
    require(data_.size() == other.data_.size(), ErrorKind::ShapeMismatch,
            "add " + shape_string(shape_) + " += " + shape_string(other.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i)
        data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double factor)
{
    for (double& v : data_)
        v *= factor;
    return *this;
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    require(a.same_shape(b), ErrorKind::ShapeMismatch,
            "compare " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace fewshot
