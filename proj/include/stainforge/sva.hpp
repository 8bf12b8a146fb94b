#pragma once

#include "stainforge/color.hpp"
#include "stainforge/rng.hpp"
#include "stainforge/stain.hpp"

namespace stainforge {

class StainVectorLibrary;
struct StainVectorRecord;

struct SvaParams {
    double i0 = kDefaultI0;
    /// Add the OD component outside the source stain plane back before
    /// rendering.
    bool preserve_residual = false;
    EstimationParams estimation;
};

/// Stain vector augmentation: rgb_to_od, NNLS deconvolution on the slide-level
/// `source` stains, reconstruction with `target` stains. The output is tagged
/// Unspecified and has the input's dimensions.
RgbPatch sva_transform(const RgbPatch& patch, const StainMatrix& source, const StainMatrix& target,
                       const SvaParams& params = {});

enum class SamplingPolicy {
    /// Scanner uniformly among distinct scanners, then a record within it.
    UniformScannerThenRecord,
    /// Uniform over all records.
    UniformRecord,
};

/// Draws a target record. Throws Error(EmptyLibrary) for an empty library.
const StainVectorRecord& sample_target(const StainVectorLibrary& library, Rng& rng,
                                       SamplingPolicy policy = SamplingPolicy::UniformScannerThenRecord);

} // namespace stainforge
