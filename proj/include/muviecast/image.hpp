#pragma once

#include <filesystem>
#include <vector>

#include "muviecast/tensor.hpp"

namespace muvie {

// Reads an 8/16-bit PNG or JPEG as RGB [3, H, W] in [0, 1].
Tensor read_image(const std::filesystem::path& path);

// Writes [3, H, W] (or [1, H, W]) clamped to [0, 1] as 8-bit. Format from
// the extension.
void write_image(const std::filesystem::path& path, const Tensor& image);

// Bilinear resize with pixel-center alignment.
Tensor resize_bilinear(const Tensor& image, int height, int width);

// Regular files with .png/.jpg/.jpeg extensions, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace muvie
