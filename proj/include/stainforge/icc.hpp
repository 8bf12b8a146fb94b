#pragma once

#include "stainforge/color.hpp"
#include "stainforge/mat3.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace stainforge::icc {

/// y = x^exponent ('curv' with one entry, or an empty 'curv' as exponent 1).
struct GammaCurve {
    double exponent = 1.0;
    bool operator==(const GammaCurve&) const = default;
};

/// Uniformly spaced samples over [0, 1], linearly interpolated.
struct TableCurve {
    std::vector<double> samples;
    bool operator==(const TableCurve&) const = default;
};

/// ICC 'para' curve. `params` holds g, a, b, c, d, e, f; unused trailing
/// entries keep their identity defaults.
struct ParametricCurve {
    int function_type = 0;
    std::array<double, 7> params{1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    bool operator==(const ParametricCurve&) const = default;
};

using ToneCurve = std::variant<GammaCurve, TableCurve, ParametricCurve>;

/// Maps an encoded value to linear light. x is clamped to [0, 1] on input and
/// the result is clamped to [0, 1].
double eval_tone_curve(const ToneCurve& curve, double x) noexcept;

/// Matrix/TRC RGB display profile.
struct IccProfile {
    std::uint32_t size = 0;
    std::string color_space; // always "RGB "
    std::string pcs;         // always "XYZ "
    std::uint32_t version = 0;
    Vec3 white_point{};      // media white, D50-relative
    std::array<Vec3, 3> colorants{};  // red, green, blue XYZ columns
    std::array<ToneCurve, 3> trc;     // red, green, blue
    /// FNV-1a of the profile bytes; stable identifier for DeviceRgb tags.
    std::string id;

    /// Columns are the colorants: device linear RGB -> PCS XYZ.
    Mat3 colorant_matrix() const;

    bool operator==(const IccProfile&) const = default;
};

/// Parses the matrix/TRC subset of an ICC profile.
///
/// Throws Error with Truncated when the buffer is shorter than the header,
/// shorter than the declared size, or a tag points outside the profile;
/// BadSignature when 'acsp' is missing; UnsupportedProfile for non-RGB data,
/// non-XYZ PCS, LUT-only profiles, missing required tags or malformed curves.
IccProfile parse_profile(std::span<const std::uint8_t> bytes);

IccProfile load_profile(const std::filesystem::path& path);

/// D50 PCS illuminant as stored by ICC (s15Fixed16-rounded).
inline constexpr Vec3 kD50{0.9642, 1.0, 0.8249};

/// Upper bound on the infinity-norm condition number of the colorant matrix.
inline constexpr double kMaxColorantCondition = 1.0e6;

/// Precomputed device -> sRGB mapping for one profile. Immutable and safe to
/// share across threads.
class SrgbTransform {
public:
    /// Throws Error(SingularMatrix) if the colorant matrix is singular or
    /// worse conditioned than `max_condition`.
    explicit SrgbTransform(const IccProfile& profile, double max_condition = kMaxColorantCondition);

    /// Linear device RGB -> linear sRGB (unclipped).
    const Mat3& matrix() const noexcept { return matrix_; }

    /// Encoded 8-bit device value -> linear device value for `channel`.
    double decode(int channel, std::uint8_t value) const noexcept { return lut_[channel][value]; }

    /// Returns the converted pixel and whether any channel needed clipping.
    Rgb8 apply(Rgb8 device, bool* clipped = nullptr) const noexcept;

private:
    Mat3 matrix_;
    std::array<std::array<double, 256>, 3> lut_{};
};

/// Bradford chromatic adaptation from `source_white` to `target_white`.
Mat3 bradford_adaptation(const Vec3& source_white, const Vec3& target_white);

/// XYZ (D65) -> linear sRGB, derived from the sRGB primaries.
const Mat3& xyz_d65_to_linear_srgb();
/// D65 white of the sRGB primaries (x = 0.3127, y = 0.3290), Y = 1.
const Vec3& srgb_d65_white();

struct SrgbConversion {
    RgbPatch patch;
    std::size_t clipped_pixels = 0;
};

/// Relative colorimetric device RGB -> sRGB: TRC decode, colorant matrix to
/// PCS XYZ, Bradford adaptation from the device white (the colorant column
/// sum, which is D50 for conforming profiles) to D65, XYZ -> linear sRGB,
/// hard clip to [0, 1], sRGB encode, quantize. The output is tagged Srgb.
RgbPatch to_srgb(const RgbPatch& patch, const IccProfile& profile);
SrgbConversion to_srgb_with_stats(const RgbPatch& patch, const SrgbTransform& transform);

} // namespace stainforge::icc
