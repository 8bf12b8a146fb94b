#include "stainforge/error.hpp"
#include "stainforge/icc.hpp"

#include "synthetic.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

using namespace stainforge;
using namespace stainforge::icc;
using stainforge::testing::fixture;

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& name)
{
    std::ifstream in(fixture("icc/" + name), std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json expected()
{
    std::ifstream in(fixture("icc/expected.json"));
    return nlohmann::json::parse(in);
}

Errc parse_error(std::span<const std::uint8_t> bytes)
{
    try {
        parse_profile(bytes);
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("parse_profile did not throw");
    return Errc::InvalidArgument;
}

void put_u32(std::vector<std::uint8_t>& bytes, std::size_t at, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        bytes[at + i] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& bytes, std::size_t at)
{
    return (std::uint32_t(bytes[at]) << 24) | (std::uint32_t(bytes[at + 1]) << 16) |
           (std::uint32_t(bytes[at + 2]) << 8) | bytes[at + 3];
}

// tag table entries start at 132: signature, offset, size
constexpr std::size_t tag_entry(int index) { return 132 + 12 * static_cast<std::size_t>(index); }

int max_channel_diff(const RgbPatch& a, const RgbPatch& b)
{
    int worst = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        worst = std::max(worst, std::abs(int(a.data()[i]) - int(b.data()[i])));
    return worst;
}

} // namespace

TEST_CASE("sRGB fixture colorants match the D50 sRGB matrix")
{
    const IccProfile p = load_profile(fixture("icc/srgb.icc"));
    CHECK(p.color_space == "RGB ");
    CHECK(p.pcs == "XYZ ");
    const auto ref = expected()["srgb_colorants_d50"];
    for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 3; ++k)
            CHECK(std::abs(p.colorants[c][k] - ref[c][k].get<double>()) <= 1.0 / 65536.0);
    CHECK(std::holds_alternative<ParametricCurve>(p.trc[0]));
    CHECK(p.white_point[1] == doctest::Approx(1.0));
}

TEST_CASE("parsing is deterministic")
{
    const auto bytes = read_bytes("table22.icc");
    const IccProfile a = parse_profile(bytes);
    const IccProfile b = parse_profile(bytes);
    CHECK(a == b);
    CHECK(a.id == b.id);
    CHECK(a.id != load_profile(fixture("icc/srgb.icc")).id);
    REQUIRE(std::holds_alternative<TableCurve>(a.trc[1]));
    CHECK(std::get<TableCurve>(a.trc[1]).samples.size() == 1024);
}

TEST_CASE("parse errors")
{
    const auto good = read_bytes("srgb.icc");

    SUBCASE("4-byte buffer is truncated")
    {
        const std::vector<std::uint8_t> tiny{0, 0, 0, 4};
        CHECK(parse_error(tiny) == Errc::Truncated);
    }
    SUBCASE("missing acsp")
    {
        auto bytes = good;
        bytes[36] = 'x';
        CHECK(parse_error(bytes) == Errc::BadSignature);
    }
    SUBCASE("declared size beyond the buffer")
    {
        auto bytes = good;
        bytes.resize(bytes.size() - 8);
        CHECK(parse_error(bytes) == Errc::Truncated);
    }
    SUBCASE("tag offset beyond the buffer")
    {
        auto bytes = good;
        put_u32(bytes, tag_entry(1) + 4, static_cast<std::uint32_t>(bytes.size() + 100));
        CHECK(parse_error(bytes) == Errc::Truncated);
    }
    SUBCASE("gray color space")
    {
        CHECK(parse_error(read_bytes("gray.icc")) == Errc::UnsupportedProfile);
    }
    SUBCASE("missing required tag")
    {
        auto bytes = good;
        std::memcpy(&bytes[tag_entry(5)], "xTRC", 4);
        CHECK(parse_error(bytes) == Errc::UnsupportedProfile);
    }
    SUBCASE("LUT-based profile")
    {
        auto bytes = good;
        std::memcpy(&bytes[tag_entry(4)], "A2B0", 4);
        try {
            parse_profile(bytes);
            FAIL("expected UnsupportedProfile");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::UnsupportedProfile);
            CHECK(e.message().find("LUT") != std::string::npos);
        }
    }
    SUBCASE("non-XYZ PCS")
    {
        auto bytes = good;
        std::memcpy(&bytes[20], "Lab ", 4);
        CHECK(parse_error(bytes) == Errc::UnsupportedProfile);
    }
}

TEST_CASE("singular colorant matrix is rejected at transform setup")
{
    auto bytes = read_bytes("srgb.icc");
    // point gXYZ at the rXYZ payload
    put_u32(bytes, tag_entry(2) + 4, get_u32(bytes, tag_entry(1) + 4));
    const IccProfile p = parse_profile(bytes);
    try {
        SrgbTransform t(p);
        FAIL("expected SingularMatrix");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::SingularMatrix);
    }
    const RgbPatch patch(1, 1, {10, 20, 30});
    CHECK_THROWS_AS(to_srgb(patch, p), Error);
}

TEST_CASE("tone curve examples")
{
    CHECK(eval_tone_curve(GammaCurve{1.0}, 0.37) == doctest::Approx(0.37));
    CHECK(eval_tone_curve(TableCurve{{0.0, 1.0}}, 0.25) == doctest::Approx(0.25));
    CHECK(eval_tone_curve(GammaCurve{2.2}, 0.5) == doctest::Approx(std::pow(0.5, 2.2)).epsilon(1e-12));
    CHECK(eval_tone_curve(GammaCurve{2.2}, 0.5) == doctest::Approx(0.21763).epsilon(1e-4));
    CHECK(eval_tone_curve(TableCurve{{0.0, 0.2, 1.0}}, 0.75) == doctest::Approx(0.6));
}

TEST_CASE("parametric curves follow the ICC formulas")
{
    const ParametricCurve srgb{3, {2.4, 1 / 1.055, 0.055 / 1.055, 1 / 12.92, 0.04045, 0.0, 0.0}};
    for (double x : {0.0, 0.01, 0.04, 0.0405, 0.2, 0.5, 0.9, 1.0})
        CHECK(eval_tone_curve(srgb, x) == doctest::Approx(srgb_decode(x)).epsilon(1e-12));
    // x == d takes the power branch; sRGB's own breakpoint takes the linear one
    CHECK(eval_tone_curve(srgb, 0.04045) == doctest::Approx(std::pow((0.04045 + 0.055) / 1.055, 2.4)).epsilon(1e-12));

    CHECK(eval_tone_curve(ParametricCurve{0, {2.0, 1, 0, 0, 0, 0, 0}}, 0.5) == doctest::Approx(0.25));
    // type 1: (a x + b)^g for x >= -b/a, else 0
    const ParametricCurve t1{1, {2.0, 2.0, -0.5, 0, 0, 0, 0}};
    CHECK(eval_tone_curve(t1, 0.2) == 0.0);
    CHECK(eval_tone_curve(t1, 0.5) == doctest::Approx(0.25));
    // type 2: (a x + b)^g + c for x >= -b/a, else c
    const ParametricCurve t2{2, {1.0, 1.0, -0.5, 0.1, 0, 0, 0}};
    CHECK(eval_tone_curve(t2, 0.2) == doctest::Approx(0.1));
    CHECK(eval_tone_curve(t2, 0.8) == doctest::Approx(0.4));
    // type 4: (a x + b)^g + e for x >= d, else c x + f
    const ParametricCurve t4{4, {1.0, 0.5, 0.0, 2.0, 0.1, 0.3, 0.05}};
    CHECK(eval_tone_curve(t4, 0.05) == doctest::Approx(0.15));
    CHECK(eval_tone_curve(t4, 0.5) == doctest::Approx(0.55));
}

TEST_CASE("tone curves stay in range and are monotone on a fine grid")
{
    const std::vector<ToneCurve> curves{
        GammaCurve{0.45}, GammaCurve{1.0}, GammaCurve{2.2}, TableCurve{{0.0, 0.1, 0.5, 0.9, 1.0}},
        ParametricCurve{3, {2.4, 1 / 1.055, 0.055 / 1.055, 1 / 12.92, 0.04045, 0, 0}},
        load_profile(fixture("icc/table22.icc")).trc[0], load_profile(fixture("icc/gamma18_wide.icc")).trc[0]};
    for (const auto& curve : curves) {
        double previous = -1.0;
        for (int i = 0; i <= 1000; ++i) {
            const double y = eval_tone_curve(curve, i * 1e-3);
            CHECK((y >= 0.0 && y <= 1.0));
            CHECK(y >= previous);
            previous = y;
        }
    }
}

TEST_CASE("sRGB fixture profile is the identity within one level")
{
    const IccProfile p = load_profile(fixture("icc/srgb.icc"));
    Rng rng(31);
    RgbPatch patch = testing::random_patch(64, 64, rng);
    patch.set_space(DeviceRgb{p.id});
    const RgbPatch out = to_srgb(patch, p);
    CHECK(std::holds_alternative<Srgb>(out.space()));
    CHECK(out.width() == 64);
    CHECK(max_channel_diff(patch, out) <= 1);

    RgbPatch ramp(256, 1);
    for (std::size_t v = 0; v < 256; ++v)
        ramp.set_pixel(v, 0, {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v)});
    CHECK(max_channel_diff(ramp, to_srgb(ramp, p)) <= 1);
}

TEST_CASE("device white maps to sRGB white")
{
    for (const char* name : {"srgb.icc", "gamma18_wide.icc", "table22.icc"}) {
        const IccProfile p = load_profile(fixture(std::string("icc/") + name));
        const RgbPatch white(1, 1, {255, 255, 255});
        CHECK(to_srgb(white, p).pixel(0, 0) == Rgb8{255, 255, 255});
        const RgbPatch black(1, 1, {0, 0, 0});
        CHECK(to_srgb(black, p).pixel(0, 0) == Rgb8{0, 0, 0});
    }
}

TEST_CASE("gamma-1.8 wide-gamut profile matches the scalar reference")
{
    const IccProfile p = load_profile(fixture("icc/gamma18_wide.icc"));
    const auto doc = expected()["gamma18_wide"];
    const auto& input = doc["input"];
    const auto& want = doc["expected"];
    RgbPatch patch(input.size(), 1);
    for (std::size_t i = 0; i < input.size(); ++i)
        patch.set_pixel(i, 0, {input[i][0].get<std::uint8_t>(), input[i][1].get<std::uint8_t>(),
                               input[i][2].get<std::uint8_t>()});
    const SrgbConversion out = to_srgb_with_stats(patch, SrgbTransform(p));
    for (std::size_t i = 0; i < input.size(); ++i)
        for (int k = 0; k < 3; ++k)
            CHECK(std::abs(int(out.patch.pixel(i, 0)[k]) - want[i][k].get<int>()) <= 1);
    // the saturated cyan pixel lies outside sRGB
    CHECK(out.clipped_pixels >= 1);
}

TEST_CASE("conversion through the sRGB profile is idempotent")
{
    const IccProfile p = load_profile(fixture("icc/srgb.icc"));
    Rng rng(8);
    const RgbPatch patch = testing::random_patch(32, 32, rng);
    const RgbPatch once = to_srgb(patch, p);
    const RgbPatch twice = to_srgb(once, p);
    CHECK(max_channel_diff(once, twice) <= 1);
}

TEST_CASE("Bradford adaptation maps white to white")
{
    const Mat3 m = bradford_adaptation(kD50, srgb_d65_white());
    const Vec3 w = m * kD50;
    for (int k = 0; k < 3; ++k)
        CHECK(w[k] == doctest::Approx(srgb_d65_white()[k]).epsilon(1e-12));
    const Vec3 lin = xyz_d65_to_linear_srgb() * srgb_d65_white();
    for (int k = 0; k < 3; ++k)
        CHECK(lin[k] == doctest::Approx(1.0).epsilon(1e-12));
}
