#pragma once

// Pixel-level helpers on planar [C,H,W] images stored as doubles.

#include <array>
#include <span>
#include <vector>

namespace gcl {

using ImageShape = std::array<std::size_t, 3>; // channels, height, width

// Bilinear sample of one channel plane at continuous coordinates (pixel
// centres at integer positions); coordinates are clamped to the border.
double sample_bilinear(std::span<const double> plane, std::size_t height, std::size_t width, double y, double x);

// Resamples the window [y0, y0+h) x [x0, x0+w) (continuous pixel units) to
// out_h x out_w using half-pixel-centre bilinear interpolation.
std::vector<double> crop_resize(std::span<const double> image, const ImageShape& shape, double y0, double x0,
                                double h, double w, std::size_t out_h, std::size_t out_w);

std::vector<double> resize_bilinear(std::span<const double> image, const ImageShape& shape, std::size_t out_h,
                                    std::size_t out_w);

// Clockwise quarter turns; a [C,H,W] image becomes [C,W,H] for odd turns.
std::vector<double> rotate_quarter_turns(std::span<const double> image, const ImageShape& shape, int turns);

// Rotation by an arbitrary angle (degrees, counter-clockwise) about the
// image centre, bilinear, zero fill. Multiples of 90 on square images are
// exact.
std::vector<double> rotate_degrees(std::span<const double> image, const ImageShape& shape, double degrees);

std::vector<double> flip_horizontal(std::span<const double> image, const ImageShape& shape);

} // namespace gcl
