#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot::image {

/// Label value excluded from losses and metrics.
inline constexpr std::uint8_t kIgnore = 255;

/// 8-bit interleaved RGB.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::uint8_t* pixel(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* pixel(int x, int y) const { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    bool operator==(const Image&) const = default;
};

/// One byte per pixel: class ids for annotations, {0,1,kIgnore} for binary masks.
struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> ids;

    LabelMap() = default;
    LabelMap(int w, int h, std::uint8_t fill = 0) : width(w), height(h), ids(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int x, int y) { return ids[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return ids[static_cast<std::size_t>(y) * width + x]; }
    bool operator==(const LabelMap&) const = default;
};

using Mask = LabelMap;

/// PNG or JPEG (detected from the file signature), converted to RGB.
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

/// Raw 8-bit values of a grayscale or palette PNG (palette indices are not expanded).
LabelMap read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const LabelMap& labels);

/// (3,H,W) tensor with values in [0,1].
Tensor to_tensor(const Image& img);

Image resize_bilinear(const Image& img, int width, int height);
LabelMap resize_nearest(const LabelMap& labels, int width, int height);

Image flip_horizontal(const Image& img);
LabelMap flip_horizontal(const LabelMap& labels);

/// Centered crop keeping `scale` of each side (scale in (0,1]).
Image center_crop(const Image& img, double scale);
LabelMap center_crop(const LabelMap& labels, double scale);

}  // namespace fewshot::image
