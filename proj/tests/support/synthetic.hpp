#pragma once

#include "stainforge/color.hpp"
#include "stainforge/rng.hpp"
#include "stainforge/stain.hpp"

#include <filesystem>
#include <string_view>
#include <vector>

namespace stainforge::testing {

/// Macenko reference H&E absorbance vectors, normalized.
StainMatrix reference_stains();

/// Rotates each reference column by up to `max_deg` about a random axis.
StainMatrix perturbed_stains(Rng& rng, double max_deg);

/// Packed OD triples V c + noise: background is excluded, 10% pure H,
/// 10% pure E, the rest mixtures. Noise is uniform in [-noise, noise] and the
/// result is clamped at 0.
std::vector<double> synth_od_pixels(const StainMatrix& stains, std::size_t n, Rng& rng, double noise);

/// 8-bit patch rendered from concentrations on `stains`: 15% background,
/// 10% pure H, 10% pure E, the rest mixtures.
RgbPatch synth_patch(const StainMatrix& stains, std::size_t width, std::size_t height, Rng& rng,
                     double i0 = kDefaultI0);

RgbPatch random_patch(std::size_t width, std::size_t height, Rng& rng);

std::filesystem::path fixture(std::string_view relative);

/// Fresh empty directory under the test build tree.
std::filesystem::path scratch_dir(std::string_view name);

} // namespace stainforge::testing
