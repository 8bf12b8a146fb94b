#include "stainforge/icc.hpp"

#include "stainforge/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>

namespace stainforge::icc {

namespace {

constexpr std::size_t kHeaderSize = 128;
constexpr std::size_t kTagEntrySize = 12;

constexpr std::uint32_t fourcc(const char (&s)[5])
{
    return (static_cast<std::uint32_t>(static_cast<unsigned char>(s[0])) << 24) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(s[1])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(s[2])) << 8) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[3]));
}

std::string fourcc_string(std::uint32_t v)
{
    std::string s(4, ' ');
    for (int i = 0; i < 4; ++i)
        s[i] = static_cast<char>((v >> (24 - 8 * i)) & 0xFF);
    return s;
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at)
{
    return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at)
{
    return (static_cast<std::uint32_t>(b[at]) << 24) | (static_cast<std::uint32_t>(b[at + 1]) << 16) |
           (static_cast<std::uint32_t>(b[at + 2]) << 8) | static_cast<std::uint32_t>(b[at + 3]);
}

double read_s15fixed16(std::span<const std::uint8_t> b, std::size_t at)
{
    return static_cast<double>(static_cast<std::int32_t>(read_u32(b, at))) / 65536.0;
}

struct TagEntry {
    std::uint32_t offset;
    std::uint32_t size;
};

Vec3 parse_xyz(std::span<const std::uint8_t> tag, std::string_view name)
{
    if (tag.size() < 20 || read_u32(tag, 0) != fourcc("XYZ "))
        throw Error(Errc::UnsupportedProfile, std::string(name) + " is not an XYZType tag");
    Vec3 v{read_s15fixed16(tag, 8), read_s15fixed16(tag, 12), read_s15fixed16(tag, 16)};
    return v;
}

ToneCurve parse_curve(std::span<const std::uint8_t> tag, std::string_view name)
{
    const auto bad = [&](const std::string& why) {
        return Error(Errc::UnsupportedProfile, std::string(name) + ": " + why);
    };
    if (tag.size() < 12)
        throw bad("curve tag too small");

    const std::uint32_t type = read_u32(tag, 0);
    if (type == fourcc("curv")) {
        const std::uint32_t count = read_u32(tag, 8);
        if (tag.size() < 12 + 2 * static_cast<std::size_t>(count))
            throw Error(Errc::Truncated, std::string(name) + ": curv entries exceed tag size");
        if (count == 0)
            return GammaCurve{1.0};
        if (count == 1) {
            const double g = read_u16(tag, 12) / 256.0;
            if (!(g > 0.0))
                throw bad("gamma exponent must be positive");
            return GammaCurve{g};
        }
        TableCurve table;
        table.samples.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i)
            table.samples.push_back(read_u16(tag, 12 + 2 * i) / 65535.0);
        return table;
    }
    if (type == fourcc("para")) {
        static constexpr std::array<std::size_t, 5> kParamCount{1, 3, 4, 5, 7};
        const int function_type = read_u16(tag, 8);
        if (function_type > 4)
            throw bad("unknown parametric function type " + std::to_string(function_type));
        const std::size_t n = kParamCount[function_type];
        if (tag.size() < 12 + 4 * n)
            throw Error(Errc::Truncated, std::string(name) + ": para parameters exceed tag size");
        ParametricCurve curve;
        curve.function_type = function_type;
        for (std::size_t i = 0; i < n; ++i)
            curve.params[i] = read_s15fixed16(tag, 12 + 4 * i);
        if (!(curve.params[0] > 0.0))
            throw bad("gamma exponent must be positive");
        if (function_type != 0 && curve.params[1] == 0.0)
            throw bad("parametric curve with a == 0");
        return curve;
    }
    throw bad("unsupported curve type '" + fourcc_string(type) + "'");
}

std::string fnv1a_hex(std::span<const std::uint8_t> bytes)
{
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto b : bytes) {
        h ^= b;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace

double eval_tone_curve(const ToneCurve& curve, double x) noexcept
{
    x = std::clamp(x, 0.0, 1.0);
    const auto power = [](double base, double g) { return std::pow(std::max(base, 0.0), g); };
    double y = 0.0;
    if (const auto* gamma = std::get_if<GammaCurve>(&curve)) {
        y = std::pow(x, gamma->exponent);
    } else if (const auto* table = std::get_if<TableCurve>(&curve)) {
        const auto& s = table->samples;
        if (s.size() < 2)
            return s.empty() ? x : std::clamp(s.front(), 0.0, 1.0);
        const double pos = x * static_cast<double>(s.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, s.size() - 1);
        const double t = pos - static_cast<double>(lo);
        y = s[lo] + (s[hi] - s[lo]) * t;
    } else {
        const auto& p = std::get<ParametricCurve>(curve);
        const double g = p.params[0], a = p.params[1], b = p.params[2], c = p.params[3];
        const double d = p.params[4], e = p.params[5], f = p.params[6];
        switch (p.function_type) {
        case 0: y = std::pow(x, g); break;
        case 1: y = x >= -b / a ? power(a * x + b, g) : 0.0; break;
        case 2: y = x >= -b / a ? power(a * x + b, g) + c : c; break;
        case 3: y = x >= d ? power(a * x + b, g) : c * x; break;
        case 4: y = x >= d ? power(a * x + b, g) + e : c * x + f; break;
        default: y = x; break;
        }
    }
    return std::clamp(y, 0.0, 1.0);
}

Mat3 IccProfile::colorant_matrix() const
{
    return Mat3::from_columns(colorants[0], colorants[1], colorants[2]);
}

IccProfile parse_profile(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kHeaderSize + 4)
        throw Error(Errc::Truncated, "buffer of " + std::to_string(bytes.size()) + " bytes is shorter than an ICC header");
    if (read_u32(bytes, 36) != fourcc("acsp"))
        throw Error(Errc::BadSignature, "missing 'acsp' profile signature");

    IccProfile profile;
    profile.size = read_u32(bytes, 0);
    if (profile.size > bytes.size())
        throw Error(Errc::Truncated, "declared size " + std::to_string(profile.size) + " exceeds buffer of " +
                                         std::to_string(bytes.size()) + " bytes");
    if (profile.size < kHeaderSize + 4)
        throw Error(Errc::Truncated, "declared size is smaller than the header");
    const auto data = bytes.first(profile.size);

    profile.version = read_u32(data, 8);
    profile.color_space = fourcc_string(read_u32(data, 16));
    profile.pcs = fourcc_string(read_u32(data, 20));
    if (profile.color_space != "RGB ")
        throw Error(Errc::UnsupportedProfile, "device color space '" + profile.color_space + "' is not RGB");
    if (profile.pcs != "XYZ ")
        throw Error(Errc::UnsupportedProfile, "profile connection space '" + profile.pcs + "' is not XYZ");

    const std::uint32_t tag_count = read_u32(data, kHeaderSize);
    if (kHeaderSize + 4 + static_cast<std::size_t>(tag_count) * kTagEntrySize > data.size())
        throw Error(Errc::Truncated, "tag table of " + std::to_string(tag_count) + " entries exceeds profile size");

    std::map<std::uint32_t, TagEntry> tags;
    for (std::uint32_t i = 0; i < tag_count; ++i) {
        const std::size_t at = kHeaderSize + 4 + i * kTagEntrySize;
        const TagEntry entry{read_u32(data, at + 4), read_u32(data, at + 8)};
        if (static_cast<std::size_t>(entry.offset) + entry.size > data.size())
            throw Error(Errc::Truncated, "tag '" + fourcc_string(read_u32(data, at)) + "' lies outside the profile");
        tags.emplace(read_u32(data, at), entry);
    }

    const auto tag_bytes = [&](const char (&sig)[5]) -> std::span<const std::uint8_t> {
        const auto it = tags.find(fourcc(sig));
        if (it == tags.end()) {
            if (tags.contains(fourcc("A2B0")))
                throw Error(Errc::UnsupportedProfile, "LUT-based (A2B) profiles are not supported");
            throw Error(Errc::UnsupportedProfile, std::string("missing required tag '") + sig + "'");
        }
        return data.subspan(it->second.offset, it->second.size);
    };

    profile.colorants[0] = parse_xyz(tag_bytes("rXYZ"), "rXYZ");
    profile.colorants[1] = parse_xyz(tag_bytes("gXYZ"), "gXYZ");
    profile.colorants[2] = parse_xyz(tag_bytes("bXYZ"), "bXYZ");
    profile.trc[0] = parse_curve(tag_bytes("rTRC"), "rTRC");
    profile.trc[1] = parse_curve(tag_bytes("gTRC"), "gTRC");
    profile.trc[2] = parse_curve(tag_bytes("bTRC"), "bTRC");
    profile.white_point = parse_xyz(tag_bytes("wtpt"), "wtpt");

    if (!(profile.white_point[1] > 0.0))
        throw Error(Errc::UnsupportedProfile, "white point Y must be positive");

    profile.id = fnv1a_hex(data);
    return profile;
}

IccProfile load_profile(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::Io, "cannot open profile " + path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_profile(bytes);
}

Mat3 bradford_adaptation(const Vec3& source_white, const Vec3& target_white)
{
    static constexpr Mat3 kBradford{{{{0.8951, 0.2664, -0.1614}, {-0.7502, 1.7135, 0.0367}, {0.0389, -0.0685, 1.0296}}}};
    static const Mat3 kBradfordInverse = *kBradford.inverse();
    const Vec3 src = kBradford * source_white;
    const Vec3 dst = kBradford * target_white;
    return kBradfordInverse * Mat3::diagonal({dst[0] / src[0], dst[1] / src[1], dst[2] / src[2]}) * kBradford;
}

const Vec3& srgb_d65_white()
{
    static const Vec3 white{0.3127 / 0.3290, 1.0, (1.0 - 0.3127 - 0.3290) / 0.3290};
    return white;
}

const Mat3& xyz_d65_to_linear_srgb()
{
    static const Mat3 matrix = [] {
        const auto column = [](double x, double y) { return Vec3{x / y, 1.0, (1.0 - x - y) / y}; };
        const Mat3 primaries = Mat3::from_columns(column(0.64, 0.33), column(0.30, 0.60), column(0.15, 0.06));
        const Vec3 scale = *primaries.inverse() * srgb_d65_white();
        const Mat3 rgb_to_xyz = primaries * Mat3::diagonal(scale);
        return *rgb_to_xyz.inverse();
    }();
    return matrix;
}

SrgbTransform::SrgbTransform(const IccProfile& profile, double max_condition)
{
    const Mat3 colorants = profile.colorant_matrix();
    for (const auto& row : colorants.m)
        for (double v : row)
            if (!std::isfinite(v))
                throw Error(Errc::SingularMatrix, "colorant matrix has non-finite entries");
    const auto inverse = colorants.inverse();
    if (!inverse)
        throw Error(Errc::SingularMatrix, "colorant matrix is singular");
    const double condition = colorants.norm_inf() * inverse->norm_inf();
    if (!(condition <= max_condition))
        throw Error(Errc::SingularMatrix, "colorant matrix condition number " + std::to_string(condition) +
                                              " exceeds bound " + std::to_string(max_condition));

    const Vec3 device_white = colorants * Vec3{1.0, 1.0, 1.0};
    if (!(device_white[0] > 0.0 && device_white[1] > 0.0 && device_white[2] > 0.0))
        throw Error(Errc::SingularMatrix, "device white is not a positive XYZ triple");

    matrix_ = xyz_d65_to_linear_srgb() * bradford_adaptation(device_white, srgb_d65_white()) * colorants;

    for (int c = 0; c < 3; ++c)
        for (int v = 0; v < 256; ++v)
            lut_[c][v] = eval_tone_curve(profile.trc[c], v / 255.0);
}

Rgb8 SrgbTransform::apply(Rgb8 device, bool* clipped) const noexcept
{
    constexpr double kClipTolerance = 1e-9;
    const Vec3 linear = matrix_ * Vec3{lut_[0][device[0]], lut_[1][device[1]], lut_[2][device[2]]};
    Rgb8 out{};
    bool any = false;
    for (int c = 0; c < 3; ++c) {
        any = any || linear[c] < -kClipTolerance || linear[c] > 1.0 + kClipTolerance;
        out[c] = quantize_u8(255.0 * srgb_encode(std::clamp(linear[c], 0.0, 1.0)));
    }
    if (clipped)
        *clipped = any;
    return out;
}

SrgbConversion to_srgb_with_stats(const RgbPatch& patch, const SrgbTransform& transform)
{
    SrgbConversion result{RgbPatch(patch.width(), patch.height(), Srgb{}), 0};
    const auto src = patch.data();
    auto dst = result.patch.data();
    for (std::size_t i = 0; i < src.size(); i += 3) {
        bool clipped = false;
        const Rgb8 out = transform.apply({src[i], src[i + 1], src[i + 2]}, &clipped);
        std::copy(out.begin(), out.end(), dst.begin() + static_cast<std::ptrdiff_t>(i));
        result.clipped_pixels += clipped ? 1 : 0;
    }
    return result;
}

RgbPatch to_srgb(const RgbPatch& patch, const IccProfile& profile)
{
    return to_srgb_with_stats(patch, SrgbTransform(profile)).patch;
}

} // namespace stainforge::icc
