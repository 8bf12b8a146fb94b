#pragma once

#include "stainforge/color.hpp"
#include "stainforge/mat3.hpp"
#include "stainforge/rng.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace stainforge {

inline constexpr double kDefaultMinStainAngleDeg = 1.0;

/// Two unit absorbance vectors, hematoxylin first, eosin second. All six
/// components are non-negative and the columns are at least
/// kDefaultMinStainAngleDeg apart.
class StainMatrix {
public:
    /// Normalizes both columns and validates the invariants; throws
    /// Error(InvalidArgument) on negative, zero, non-finite or near-parallel
    /// columns.
    static StainMatrix from_columns(const Vec3& hematoxylin, const Vec3& eosin,
                                    double min_angle_deg = kDefaultMinStainAngleDeg);

    const Vec3& hematoxylin() const noexcept { return h_; }
    const Vec3& eosin() const noexcept { return e_; }
    const Vec3& column(int i) const noexcept { return i == 0 ? h_ : e_; }

    /// Angle between the two columns in degrees.
    double separation_deg() const noexcept;

    bool operator==(const StainMatrix&) const = default;

private:
    StainMatrix(const Vec3& h, const Vec3& e) : h_(h), e_(e) {}
    Vec3 h_;
    Vec3 e_;
};

/// Angle in degrees between two non-zero vectors.
double angle_deg(const Vec3& a, const Vec3& b) noexcept;

struct EstimationParams {
    /// Pixels with any OD component at or below beta are discarded.
    double beta = 0.15;
    /// Robust extreme-angle percentile, in (0, 50).
    double alpha = 1.0;
    /// Tissue pixels beyond this count are subsampled uniformly.
    std::size_t max_pixels = 200'000;
    /// Minimum number of pixels that must survive the beta filter.
    std::size_t min_pixels = 100;
    /// Second/first eigenvalue ratio below which the distribution is
    /// treated as a single stain.
    double min_plane_ratio = 1e-4;
    double min_angle_deg = kDefaultMinStainAngleDeg;

    /// Throws Error(InvalidArgument) when a field is out of range.
    void validate() const;
};

struct StainEstimate {
    StainMatrix stains;
    /// Pixels that entered the scatter/angle computation.
    std::size_t pixels_used;
};

/// Macenko-style estimation: beta filter, top-2 eigenplane of the OD scatter,
/// alpha / (100 - alpha) percentile angles, back-projection, sign fix,
/// normalization, and H/E ordering by red OD (larger red is hematoxylin).
///
/// `od_pixels` holds packed OD triples. `rng` is only consulted when more
/// than params.max_pixels pixels pass the filter.
///
/// Errors: InsufficientTissue, DegenerateDistribution, AmbiguousOrdering.
StainEstimate estimate_stain_vectors_detailed(std::span<const double> od_pixels, const EstimationParams& params,
                                              Rng* rng = nullptr);
StainMatrix estimate_stain_vectors(std::span<const double> od_pixels, const EstimationParams& params = {},
                                   Rng* rng = nullptr);

/// Per-pixel non-negative hematoxylin/eosin concentrations.
struct ConcentrationMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> data; // two values per pixel, row-major

    std::size_t pixel_count() const noexcept { return width * height; }
};

/// NNLS decomposition of each OD pixel on the stain basis. When `residual` is
/// non-null it receives od - stains * c per pixel. A non-converging pixel is
/// reported as MaxIterationsExceeded with its coordinates.
ConcentrationMap deconvolve(const OdPatch& od, const StainMatrix& stains, OdPatch* residual = nullptr);

/// od' = target * c (+ residual), then od_to_rgb.
RgbPatch reconstruct(const ConcentrationMap& conc, const StainMatrix& target, double i0 = kDefaultI0,
                     const OdPatch* residual = nullptr);

} // namespace stainforge
