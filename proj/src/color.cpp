#include "stainforge/color.hpp"

#include "stainforge/error.hpp"

#include <algorithm>
#include <cmath>

namespace stainforge {

std::string to_string(const ColorSpaceTag& space)
{
    if (std::holds_alternative<Srgb>(space))
        return "srgb";
    if (const auto* device = std::get_if<DeviceRgb>(&space))
        return "device-rgb:" + device->profile_id;
    return "unspecified";
}

RgbPatch::RgbPatch(std::size_t width, std::size_t height, ColorSpaceTag space)
    : RgbPatch(width, height, std::vector<std::uint8_t>(width * height * kChannels, 0), std::move(space))
{
}

RgbPatch::RgbPatch(std::size_t width, std::size_t height, std::vector<std::uint8_t> data, ColorSpaceTag space)
    : width_(width), height_(height), data_(std::move(data)), space_(std::move(space))
{
    if (width_ < 1 || height_ < 1)
        throw Error(Errc::InvalidArgument, "patch dimensions must be at least 1x1");
    if (data_.size() != width_ * height_ * kChannels)
        throw Error(Errc::InvalidArgument, "patch buffer size does not match width * height * 3");
}

double intensity_to_od(double intensity, double i0) noexcept
{
    const double clamped = std::clamp(intensity, kIntensityFloor, std::max(i0, kIntensityFloor));
    return -std::log10(clamped / i0);
}

std::uint8_t quantize_u8(double value) noexcept
{
    const double rounded = std::floor(value + 0.5);
    return static_cast<std::uint8_t>(std::clamp(rounded, 0.0, 255.0));
}

std::uint8_t od_to_intensity(double od, double i0) noexcept
{
    return quantize_u8(i0 * std::pow(10.0, -od));
}

OdPatch rgb_to_od(const RgbPatch& patch, double i0)
{
    if (!(i0 > 0.0))
        throw Error(Errc::InvalidArgument, "reference intensity i0 must be positive");

    std::array<double, 256> table{};
    for (std::size_t v = 0; v < table.size(); ++v)
        table[v] = intensity_to_od(static_cast<double>(v), i0);

    OdPatch od{patch.width(), patch.height(), i0, {}};
    const auto src = patch.data();
    od.data.resize(src.size());
    std::transform(src.begin(), src.end(), od.data.begin(), [&](std::uint8_t v) { return table[v]; });
    return od;
}

RgbPatch od_to_rgb(const OdPatch& od, double i0)
{
    std::vector<std::uint8_t> out(od.data.size());
    std::transform(od.data.begin(), od.data.end(), out.begin(),
                   [i0](double v) { return od_to_intensity(v, i0); });
    return RgbPatch(od.width, od.height, std::move(out), Unspecified{});
}

double srgb_decode(double encoded) noexcept
{
    if (encoded <= 0.04045)
        return encoded / 12.92;
    return std::pow((encoded + 0.055) / 1.055, 2.4);
}

double srgb_encode(double linear) noexcept
{
    if (linear <= 0.0031308)
        return linear * 12.92;
    return 1.055 * std::pow(linear, 1.0 / 2.4) - 0.055;
}

} // namespace stainforge
