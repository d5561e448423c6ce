#pragma once

#include <filesystem>
#include <optional>

#include "degmon/image.hpp"

namespace degmon {

/// Decodes PNG/JPEG to RGB in [0,1] (value / 255). Grayscale inputs are
/// replicated to three channels. Throws IoError when the file cannot be
/// decoded.
ImageBuffer read_image(const std::filesystem::path& path);

/// Like read_image but returns nullopt for unreadable or undecodable files.
std::optional<ImageBuffer> try_read_image(const std::filesystem::path& path);

/// Writes an 8-bit PNG (values rounded to the nearest 1/255).
void write_png(const std::filesystem::path& path, const ImageBuffer& img);

}  // namespace degmon
