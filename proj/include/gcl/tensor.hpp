#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gcl {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

// Dense row-major array of doubles. Value type; copies are deep.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> values);

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    bool empty() const noexcept { return data.empty(); }

    double& operator[](std::size_t i) noexcept { return data[i]; }
    double operator[](std::size_t i) const noexcept { return data[i]; }

    std::span<double> values() noexcept { return data; }
    std::span<const double> values() const noexcept { return data; }

    // Row i of a tensor viewed as [shape[0], rest...].
    std::span<const double> row(std::size_t i) const;

    bool operator==(const Tensor&) const = default;
};

bool all_finite(std::span<const double> values) noexcept;

} // namespace gcl
