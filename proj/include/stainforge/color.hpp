#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace stainforge {

struct Unspecified {
    bool operator==(const Unspecified&) const = default;
};
struct Srgb {
    bool operator==(const Srgb&) const = default;
};
/// Device RGB described by an ICC profile.
struct DeviceRgb {
    std::string profile_id;
    bool operator==(const DeviceRgb&) const = default;
};

using ColorSpaceTag = std::variant<Unspecified, Srgb, DeviceRgb>;

std::string to_string(const ColorSpaceTag& space);

using Rgb8 = std::array<std::uint8_t, 3>;

/// Row-major 8-bit RGB image. Width and height are at least 1 and the buffer
/// always holds exactly width * height * 3 bytes.
class RgbPatch {
public:
    static constexpr std::size_t kChannels = 3;

    /// Black patch of the given size.
    RgbPatch(std::size_t width, std::size_t height, ColorSpaceTag space = Unspecified{});
    RgbPatch(std::size_t width, std::size_t height, std::vector<std::uint8_t> data,
             ColorSpaceTag space = Unspecified{});

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t pixel_count() const noexcept { return width_ * height_; }

    const ColorSpaceTag& space() const noexcept { return space_; }
    void set_space(ColorSpaceTag space) { space_ = std::move(space); }

    std::span<const std::uint8_t> data() const noexcept { return data_; }
    std::span<std::uint8_t> data() noexcept { return data_; }

    Rgb8 pixel(std::size_t x, std::size_t y) const noexcept
    {
        const std::size_t i = (y * width_ + x) * kChannels;
        return {data_[i], data_[i + 1], data_[i + 2]};
    }
    void set_pixel(std::size_t x, std::size_t y, Rgb8 value) noexcept
    {
        const std::size_t i = (y * width_ + x) * kChannels;
        data_[i] = value[0];
        data_[i + 1] = value[1];
        data_[i + 2] = value[2];
    }

    /// Pixel-data equality; the color space tag is not compared.
    bool same_pixels(const RgbPatch& other) const noexcept
    {
        return width_ == other.width_ && height_ == other.height_ && data_ == other.data_;
    }

private:
    std::size_t width_;
    std::size_t height_;
    std::vector<std::uint8_t> data_;
    ColorSpaceTag space_;
};

inline constexpr double kDefaultI0 = 255.0;
/// Intensities are clamped to this floor before taking the logarithm.
inline constexpr double kIntensityFloor = 1.0;

/// Absorbance image: row-major, three non-negative doubles per pixel.
struct OdPatch {
    std::size_t width = 0;
    std::size_t height = 0;
    double i0 = kDefaultI0;
    std::vector<double> data;

    std::size_t pixel_count() const noexcept { return width * height; }
    std::span<const double, 3> pixel(std::size_t index) const noexcept
    {
        return std::span<const double, 3>(data.data() + index * 3, 3);
    }
};

/// od = -log10(clamp(i, 1, i0) / i0) per channel.
OdPatch rgb_to_od(const RgbPatch& patch, double i0 = kDefaultI0);

/// i = round_half_up(clamp(i0 * 10^-od, 0, 255)); the result is Unspecified.
RgbPatch od_to_rgb(const OdPatch& od, double i0 = kDefaultI0);

/// Scalar forms of the two maps above.
double intensity_to_od(double intensity, double i0 = kDefaultI0) noexcept;
std::uint8_t od_to_intensity(double od, double i0 = kDefaultI0) noexcept;

/// Round half up, clamp to [0, 255].
std::uint8_t quantize_u8(double value) noexcept;

// sRGB transfer function, both directions, on [0, 1].
double srgb_decode(double encoded) noexcept;
double srgb_encode(double linear) noexcept;

} // namespace stainforge
