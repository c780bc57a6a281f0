#include "gcl/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gcl/errors.hpp"

namespace gcl {

namespace {

void check_size(std::span<const double> image, const ImageShape& shape) {
    if (image.size() != shape[0] * shape[1] * shape[2]) throw ContractError("image size does not match its shape");
}

} // namespace

double sample_bilinear(std::span<const double> plane, std::size_t height, std::size_t width, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, height - 1);
    const std::size_t x1 = std::min(x0 + 1, width - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    const double top = plane[y0 * width + x0] * (1.0 - fx) + plane[y0 * width + x1] * fx;
    const double bottom = plane[y1 * width + x0] * (1.0 - fx) + plane[y1 * width + x1] * fx;
    return top * (1.0 - fy) + bottom * fy;
}

std::vector<double> crop_resize(std::span<const double> image, const ImageShape& shape, double y0, double x0,
                                double h, double w, std::size_t out_h, std::size_t out_w) {
    check_size(image, shape);
    const auto [c, height, width] = shape;
    std::vector<double> out(c * out_h * out_w);
    const double sy = h / static_cast<double>(out_h);
    const double sx = w / static_cast<double>(out_w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const auto plane = image.subspan(ch * height * width, height * width);
        for (std::size_t i = 0; i < out_h; ++i)
            for (std::size_t j = 0; j < out_w; ++j) {
                const double y = y0 + (static_cast<double>(i) + 0.5) * sy - 0.5;
                const double x = x0 + (static_cast<double>(j) + 0.5) * sx - 0.5;
                out[(ch * out_h + i) * out_w + j] = sample_bilinear(plane, height, width, y, x);
            }
    }
    return out;
}

std::vector<double> resize_bilinear(std::span<const double> image, const ImageShape& shape, std::size_t out_h,
                                    std::size_t out_w) {
    if (shape[1] == out_h && shape[2] == out_w) return {image.begin(), image.end()};
    return crop_resize(image, shape, 0.0, 0.0, static_cast<double>(shape[1]), static_cast<double>(shape[2]), out_h,
                       out_w);
}

std::vector<double> rotate_quarter_turns(std::span<const double> image, const ImageShape& shape, int turns) {
    check_size(image, shape);
    turns = ((turns % 4) + 4) % 4;
    std::vector<double> cur(image.begin(), image.end());
    auto [c, h, w] = shape;
    for (int t = 0; t < turns; ++t) {
        std::vector<double> next(cur.size());
        // clockwise: out[i][j] = in[h-1-j][i], output is w x h
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < w; ++i)
                for (std::size_t j = 0; j < h; ++j)
                    next[(ch * w + i) * h + j] = cur[(ch * h + (h - 1 - j)) * w + i];
        cur = std::move(next);
        std::swap(h, w);
    }
    return cur;
}

std::vector<double> rotate_degrees(std::span<const double> image, const ImageShape& shape, double degrees) {
    check_size(image, shape);
    const auto [c, h, w] = shape;
    const double turns = degrees / 90.0;
    if (h == w && turns == std::round(turns)) return rotate_quarter_turns(image, shape, -static_cast<int>(turns));
    const double rad = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(rad);
    const double sn = std::sin(rad);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    std::vector<double> out(image.size(), 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const auto plane = image.subspan(ch * h * w, h * w);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                // inverse mapping; image rows grow downward
                const double dy = static_cast<double>(i) - cy;
                const double dx = static_cast<double>(j) - cx;
                const double sx = cs * dx - sn * dy + cx;
                const double sy = sn * dx + cs * dy + cy;
                if (sy < -0.5 || sx < -0.5 || sy > static_cast<double>(h) - 0.5 || sx > static_cast<double>(w) - 0.5)
                    continue;
                out[(ch * h + i) * w + j] = sample_bilinear(plane, h, w, sy, sx);
            }
    }
    return out;
}

std::vector<double> flip_horizontal(std::span<const double> image, const ImageShape& shape) {
    check_size(image, shape);
    const auto [c, h, w] = shape;
    std::vector<double> out(image.size());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) out[(ch * h + i) * w + j] = image[(ch * h + i) * w + (w - 1 - j)];
    return out;
}

} // namespace gcl
