#pragma once

#include "stainforge/color.hpp"

#include <filesystem>
#include <vector>

namespace stainforge {

/// Reads an 8-bit PNG as RGB. Gray is expanded, alpha is dropped, 16-bit is
/// rejected. Throws Error(Io) on failure.
RgbPatch read_png(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG with fixed encoder settings and no timestamps, so
/// identical pixels give identical files.
void write_png(const std::filesystem::path& path, const RgbPatch& patch);

/// PNG files directly inside `dir`, sorted by file name.
std::vector<std::filesystem::path> list_png_files(const std::filesystem::path& dir);

} // namespace stainforge
