#include "gcl/tensor.hpp"

#include <cmath>
#include <numeric>

#include "gcl/errors.hpp"

namespace gcl {

std::size_t numel(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape))
        throw ContractError("tensor of shape " + to_string(shape) + " given " +
                            std::to_string(data.size()) + " values");
}

std::span<const double> Tensor::row(std::size_t i) const {
    if (shape.empty() || i >= shape[0]) throw ContractError("row index out of range");
    const std::size_t stride = data.size() / shape[0];
    return std::span<const double>(data).subspan(i * stride, stride);
}

bool all_finite(std::span<const double> values) noexcept {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace gcl
