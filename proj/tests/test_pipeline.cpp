#include "stainforge/error.hpp"
#include "stainforge/icc.hpp"
#include "stainforge/image_io.hpp"
#include "stainforge/pipeline.hpp"

#include "synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

using namespace stainforge;
using testing::reference_stains;

namespace {

int max_diff(const RgbPatch& a, const RgbPatch& b)
{
    int worst = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        worst = std::max(worst, std::abs(int(a.data()[i]) - int(b.data()[i])));
    return worst;
}

std::vector<std::size_t> counts(const std::vector<std::size_t>& assignment, std::size_t k)
{
    std::vector<std::size_t> c(k, 0);
    for (const auto d : assignment)
        ++c.at(d);
    return c;
}

Errc error_of(const auto& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no stainforge::Error thrown");
    return Errc::InvalidArgument;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

StainVectorRecord make_record(const std::string& id, const std::string& scanner, const StainMatrix& s)
{
    return {s, id, "lab", scanner, "hcc", 1000, "2024-01-01T00:00:00Z"};
}

} // namespace

TEST_CASE("scheduler examples")
{
    Rng rng(1);
    const auto ten = schedule_domains(10, 5, rng);
    CHECK(counts(ten, 5) == std::vector<std::size_t>(5, 2));

    auto seven = counts(schedule_domains(7, 3, rng), 3);
    std::sort(seven.begin(), seven.end());
    CHECK(seven == std::vector<std::size_t>{2, 2, 3});

    Rng a = Rng::derive(99, kScheduleStream), b = Rng::derive(99, kScheduleStream);
    const auto big = schedule_domains(100000, 4, a);
    CHECK(big == schedule_domains(100000, 4, b));
    CHECK(counts(big, 4) == std::vector<std::size_t>(4, 25000));

    CHECK(schedule_domains(0, 3, rng).empty());
    CHECK(error_of([&] { schedule_domains(3, 0, rng); }) == Errc::InvalidArgument);
}

TEST_CASE("scheduler balance holds for sampled sizes")
{
    Rng pick = Rng::derive(5, 5);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 1 + pick.uniform_index(10000);
        const std::size_t k = 1 + pick.uniform_index(std::min<std::size_t>(n, 64));
        Rng rng = Rng::derive(trial, 0);
        const auto c = counts(schedule_domains(n, k, rng), k);
        const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
        CHECK(*hi - *lo <= 1);
        CHECK(*lo == n / k);
    }
}

TEST_CASE("extra patches do not always go to the first domains")
{
    std::vector<std::size_t> heavy(3, 0);
    for (std::uint64_t s = 0; s < 300; ++s) {
        Rng rng(s);
        const auto c = counts(schedule_domains(4, 3, rng), 3);
        for (std::size_t d = 0; d < 3; ++d)
            heavy[d] += c[d] == 2;
    }
    for (const auto h : heavy)
        CHECK(h > 60);
}

TEST_CASE("baseline operations")
{
    const RgbPatch two(2, 1, {1, 2, 3, 4, 5, 6});
    CHECK(flip_horizontal(two).same_pixels(RgbPatch(2, 1, {4, 5, 6, 1, 2, 3})));
    CHECK(flip_vertical(two).same_pixels(two));

    const RgbPatch gray(1, 1, {100, 100, 100});
    CHECK(adjust_brightness(gray, 1.1).same_pixels(RgbPatch(1, 1, {110, 110, 110})));
    CHECK(adjust_brightness(RgbPatch(1, 1, {250, 10, 0}), 2.0).same_pixels(RgbPatch(1, 1, {255, 20, 0})));

    // 2x2 counter-clockwise: top-right moves to top-left
    const RgbPatch square(2, 2, {1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4});
    CHECK(rotate_quarter_turns(square, 1).same_pixels(RgbPatch(2, 2, {2, 2, 2, 4, 4, 4, 1, 1, 1, 3, 3, 3})));
    CHECK(rotate_quarter_turns(square, 4).same_pixels(square));
    CHECK(rotate_quarter_turns(rotate_quarter_turns(square, 1), 3).same_pixels(square));
    const RgbPatch wide(3, 2);
    CHECK(rotate_quarter_turns(wide, 1).width() == 2);
    CHECK(rotate_quarter_turns(wide, 1).height() == 3);

    Rng rng(8);
    const RgbPatch patch = testing::random_patch(16, 12, rng);
    CHECK(max_diff(rotate_bilinear(patch, 0.0), patch) == 0);
    const RgbPatch tilted = rotate_bilinear(patch, 45.0);
    CHECK(tilted.pixel(0, 0) == Rgb8{255, 255, 255});

    const RgbPatch window = crop(patch, 3, 2, 5, 4);
    CHECK(window.width() == 5);
    CHECK(window.height() == 4);
    CHECK(window.pixel(0, 0) == patch.pixel(3, 2));
    CHECK(window.pixel(4, 3) == patch.pixel(7, 5));
    CHECK(error_of([&] { crop(patch, 0, 0, 17, 4); }) == Errc::CropLargerThanPatch);
    CHECK(error_of([&] { crop(patch, 12, 0, 5, 4); }) == Errc::CropLargerThanPatch);

    const RgbPatch g = to_grayscale(patch);
    for (std::size_t i = 0; i < g.pixel_count(); ++i) {
        const auto p = g.pixel(i % g.width(), i / g.width());
        CHECK(p[0] == p[1]);
        CHECK(p[1] == p[2]);
    }

    CHECK(max_diff(shift_hue(patch, 0.0), patch) <= 1);
    CHECK(max_diff(adjust_saturation(patch, 1.0), patch) <= 1);
    CHECK(max_diff(adjust_contrast(patch, 1.0), patch) == 0);
    CHECK(max_diff(add_gaussian_noise(patch, 0.0, rng), patch) == 0);
    // pure red rotated by 120 degrees becomes green
    const RgbPatch green = shift_hue(RgbPatch(1, 1, {255, 0, 0}), 120.0);
    CHECK(max_diff(green, RgbPatch(1, 1, {0, 255, 0})) <= 1);
}

TEST_CASE("apply_baseline")
{
    Rng data(3);
    const RgbPatch patch = testing::random_patch(32, 24, data);

    SUBCASE("everything disabled is the identity")
    {
        Rng rng(1);
        CHECK_FALSE(BaselineParams{}.any_enabled());
        CHECK(apply_baseline(patch, {}, rng).same_pixels(patch));
    }
    SUBCASE("crop gives the requested size")
    {
        BaselineParams p;
        p.crop_width = 10;
        p.crop_height = 7;
        Rng rng(2);
        const RgbPatch out = apply_baseline(patch, p, rng);
        CHECK(out.width() == 10);
        CHECK(out.height() == 7);
        p.crop_width = 33;
        CHECK(error_of([&] { apply_baseline(patch, p, rng); }) == Errc::CropLargerThanPatch);
    }
    SUBCASE("rotations draw from the configured set")
    {
        BaselineParams p;
        p.rotations_deg = {0, 90, 180, 270};
        bool saw_turn = false, saw_same = false;
        for (std::uint64_t s = 0; s < 40; ++s) {
            Rng rng(s);
            const RgbPatch out = apply_baseline(patch, p, rng);
            saw_turn |= out.width() == 24;
            saw_same |= out.width() == 32;
        }
        CHECK(saw_turn);
        CHECK(saw_same);
    }
    SUBCASE("always flipping")
    {
        BaselineParams p;
        p.hflip_probability = 1.0;
        Rng rng(4);
        CHECK(apply_baseline(patch, p, rng).same_pixels(flip_horizontal(patch)));
    }
    SUBCASE("same generator state gives the same output")
    {
        BaselineParams p;
        p.hflip_probability = 0.5;
        p.hue_shift_deg = 10;
        p.saturation = FactorRange::between(0.8, 1.2);
        p.brightness = FactorRange::between(0.9, 1.1);
        p.noise_sigma = 3.0;
        Rng a(77), b(77);
        CHECK(apply_baseline(patch, p, a).same_pixels(apply_baseline(patch, p, b)));
    }
    SUBCASE("invalid parameters")
    {
        BaselineParams p;
        p.rotations_deg = {45};
        CHECK(error_of([&] { p.validate(); }) == Errc::InvalidArgument);
        p = {};
        p.hflip_probability = 1.5;
        CHECK(error_of([&] { p.validate(); }) == Errc::InvalidArgument);
        p = {};
        p.brightness = FactorRange::between(1.2, 0.8);
        CHECK(error_of([&] { p.validate(); }) == Errc::InvalidArgument);
        p = {};
        p.crop_width = 4;
        CHECK(error_of([&] { p.validate(); }) == Errc::InvalidArgument);
    }
}

TEST_CASE("augment with each method")
{
    Rng data(21);
    const StainMatrix source = testing::perturbed_stains(data, 4.0);
    const RgbPatch patch = testing::synth_patch(source, 32, 32, data);

    SUBCASE("baseline with nothing enabled")
    {
        AugmentConfig cfg;
        const AugmentResult r = augment(patch, {}, cfg, 0);
        CHECK(r.patch.same_pixels(patch));
        CHECK(r.domain.empty());
    }
    SUBCASE("icc with the sRGB profile")
    {
        AugmentConfig cfg;
        cfg.method = AugmentMethod::IccCal;
        SlideContext ctx;
        ctx.profile = std::make_shared<const icc::IccProfile>(icc::load_profile(testing::fixture("icc/srgb.icc")));
        const AugmentResult r = augment(patch, ctx, cfg, 3);
        CHECK(max_diff(r.patch, patch) <= 1);
        CHECK(r.domain == "srgb");
        CHECK(std::holds_alternative<Srgb>(r.patch.space()));

        const Augmenter aug(cfg);
        CHECK(max_diff(aug.infer(patch, ctx), patch) <= 1);
        CHECK(error_of([&] { aug.augment(patch, {}, 0); }) == Errc::InvalidArgument);
    }
    SUBCASE("sva against a single record equal to the source")
    {
        auto lib = std::make_shared<StainVectorLibrary>();
        lib->add(make_record("only", "aperio", source));
        AugmentConfig cfg;
        cfg.method = AugmentMethod::Sva;
        cfg.targets = {"aperio"};
        const Augmenter aug(cfg, lib);
        SlideContext ctx;
        ctx.source = source;
        for (std::uint64_t i = 0; i < 4; ++i) {
            const AugmentResult r = aug.augment(patch, ctx, i);
            CHECK(max_diff(r.patch, patch) <= 1);
            CHECK(r.domain == "aperio");
            CHECK(r.target_slide == "only");
        }
        ctx.domain = std::string(kIdentityDomain);
        const AugmentResult id = aug.augment(patch, ctx, 0);
        CHECK(id.patch.same_pixels(patch));
        CHECK(id.domain == kIdentityDomain);
        CHECK(aug.infer(patch, ctx).same_pixels(patch));

        CHECK(error_of([&] { aug.augment(patch, {}, 0); }) == Errc::InvalidArgument);
        cfg.targets = {"nope"};
        CHECK(error_of([&] { Augmenter bad(cfg, lib); }) == Errc::InvalidArgument);
        cfg.targets = {"aperio"};
        CHECK(error_of([&] { Augmenter bad(cfg, std::make_shared<StainVectorLibrary>()); }) == Errc::EmptyLibrary);
    }
    SUBCASE("sva picks a record of the scheduled scanner")
    {
        auto lib = std::make_shared<StainVectorLibrary>();
        lib->add(make_record("a", "A", reference_stains()));
        lib->add(make_record("b1", "B", testing::perturbed_stains(data, 5.0)));
        lib->add(make_record("b2", "B", testing::perturbed_stains(data, 5.0)));
        AugmentConfig cfg;
        cfg.method = AugmentMethod::Sva;
        cfg.targets = {"A", "B"};
        const Augmenter aug(cfg, lib);
        SlideContext ctx;
        ctx.source = source;
        ctx.domain = "B";
        for (std::uint64_t i = 0; i < 20; ++i) {
            const AugmentResult r = aug.augment(patch, ctx, i);
            CHECK(r.domain == "B");
            CHECK(r.target_slide != "a");
        }
    }
    SUBCASE("same seed and index give the same bytes")
    {
        AugmentConfig cfg;
        cfg.seed = 5;
        cfg.baseline.hflip_probability = 0.5;
        cfg.baseline.noise_sigma = 4.0;
        const Augmenter aug(cfg);
        CHECK(aug.augment(patch, {}, 9).patch.same_pixels(aug.augment(patch, {}, 9).patch));
        bool differs = false;
        for (std::uint64_t i = 0; i < 5; ++i)
            differs |= !aug.augment(patch, {}, i).patch.same_pixels(aug.augment(patch, {}, 9).patch);
        CHECK(differs);
    }
}

TEST_CASE("scanner-transform adapter")
{
    const auto dir = testing::scratch_dir("pipeline_st");
    const RgbPatch patch(3, 2, {10, 20, 30, 10, 20, 30, 10, 20, 30, 10, 20, 30, 10, 20, 30, 10, 20, 30});

    CHECK(apply_st_adapter(patch, "cp {in} {out}", "any").same_pixels(patch));
    CHECK(apply_st_adapter(patch, std::string(ST_SWAP_BIN) + " {in} {out} {domain}", "B")
              .same_pixels(RgbPatch(3, 2, {30, 20, 10, 30, 20, 10, 30, 20, 10, 30, 20, 10, 30, 20, 10, 30, 20, 10})));

    write_png(dir / "small.png", RgbPatch(2, 2));
    CHECK(error_of([&] { apply_st_adapter(patch, "cp " + (dir / "small.png").string() + " {out}", "x"); }) ==
          Errc::StAdapterFailure);
    CHECK(error_of([&] { apply_st_adapter(patch, "false", "x"); }) == Errc::StAdapterFailure);
    CHECK(error_of([&] { apply_st_adapter(patch, "true", "x"); }) == Errc::StAdapterFailure);
    CHECK(error_of([&] { apply_st_adapter(patch, "/nonexistent/tool {in} {out}", "x"); }) ==
          Errc::StAdapterFailure);
    CHECK(error_of([&] { apply_st_adapter(patch, "cp \"{in} {out}", "x"); }) == Errc::InvalidArgument);

    AugmentConfig cfg;
    cfg.method = AugmentMethod::StHook;
    cfg.targets = {"B"};
    cfg.st_command = std::string(ST_SWAP_BIN) + " {in} {out} {domain}";
    const Augmenter aug(cfg);
    SlideContext ctx;
    ctx.domain = "B";
    const AugmentResult r = aug.augment(patch, ctx, 0);
    CHECK(r.patch.pixel(0, 0) == Rgb8{30, 20, 10});
    CHECK(r.domain == "B");
    ctx.domain = std::string(kIdentityDomain);
    CHECK(aug.augment(patch, ctx, 0).patch.same_pixels(patch));
}

TEST_CASE("config parsing")
{
    const AugmentConfig cfg = parse_augment_config(R"(
method = "sva"
targets = ["aperio", "philips"]
include_identity = false
seed = 42
library = "lib.jsonl"
policy = "uniform-record"
st_slots = 2

[sva]
preserve_residual = true
i0 = 240

[baseline]
hflip = 0.5
rotations = [0, 90]
crop = [16, 8]
saturation = [0.9, 1.1]
noise_sigma = 2
)");
    CHECK(cfg.method == AugmentMethod::Sva);
    CHECK(cfg.targets == std::vector<std::string>{"aperio", "philips"});
    CHECK_FALSE(cfg.include_identity);
    CHECK(cfg.domains() == std::vector<std::string>{"aperio", "philips"});
    CHECK(cfg.seed == 42);
    CHECK(cfg.library_path == "lib.jsonl");
    CHECK(cfg.policy == SamplingPolicy::UniformRecord);
    CHECK(cfg.st_slots == 2);
    CHECK(cfg.sva.preserve_residual);
    CHECK(cfg.sva.i0 == 240.0);
    CHECK(cfg.baseline.hflip_probability == 0.5);
    CHECK(cfg.baseline.rotations_deg == std::vector<int>{0, 90});
    CHECK(cfg.baseline.crop_width == 16);
    CHECK(cfg.baseline.crop_height == 8);
    CHECK(cfg.baseline.saturation.enabled);
    CHECK(cfg.baseline.saturation.hi == 1.1);
    CHECK(cfg.baseline.noise_sigma == 2.0);

    const AugmentConfig defaults = parse_augment_config("");
    CHECK(defaults.method == AugmentMethod::Baseline);
    CHECK(defaults.include_identity);

    AugmentConfig with_identity;
    with_identity.targets = {"x"};
    CHECK(with_identity.domains() == std::vector<std::string>{"x", std::string(kIdentityDomain)});

    CHECK(error_of([] { parse_augment_config("colour = 1"); }) == Errc::InvalidArgument);
    CHECK(error_of([] { parse_augment_config("[baseline]\nflip = 0.5"); }) == Errc::InvalidArgument);
    CHECK(error_of([] { parse_augment_config("method = \"magic\""); }) == Errc::InvalidArgument);
    CHECK(error_of([] { parse_augment_config("policy = \"sometimes\""); }) == Errc::InvalidArgument);
    CHECK(error_of([] { parse_augment_config("method = "); }) == Errc::InvalidArgument);
    CHECK(error_of([] { parse_augment_config("[baseline]\nsaturation = [1.0]"); }) == Errc::InvalidArgument);
}

TEST_CASE("method names")
{
    for (const auto m : {AugmentMethod::Baseline, AugmentMethod::IccCal, AugmentMethod::Sva, AugmentMethod::StHook})
        CHECK(parse_augment_method(to_string(m)) == m);
    CHECK(to_string(AugmentMethod::IccCal) == "icc");
    CHECK_FALSE(parse_augment_method("SVA").has_value());
}

TEST_CASE("augment_files does not depend on the thread count")
{
    const auto dir = testing::scratch_dir("pipeline_files");
    Rng data(31);
    const StainMatrix source = testing::perturbed_stains(data, 4.0);
    std::vector<std::filesystem::path> inputs;
    std::filesystem::create_directories(dir / "in");
    for (int i = 0; i < 24; ++i) {
        inputs.push_back(dir / "in" / ("p" + std::to_string(100 + i) + ".png"));
        write_png(inputs.back(), testing::synth_patch(source, 24, 24, data));
    }

    auto lib = std::make_shared<StainVectorLibrary>();
    lib->add(make_record("a1", "A", testing::perturbed_stains(data, 6.0)));
    lib->add(make_record("b1", "B", testing::perturbed_stains(data, 6.0)));
    lib->add(make_record("b2", "B", testing::perturbed_stains(data, 6.0)));
    AugmentConfig cfg;
    cfg.method = AugmentMethod::Sva;
    cfg.targets = {"A", "B"};
    cfg.seed = 2024;
    cfg.baseline.hflip_probability = 0.5;
    cfg.baseline.noise_sigma = 2.0;
    const Augmenter aug(cfg, lib);
    SlideContext ctx;
    ctx.source = source;

    const auto one = augment_files(aug, inputs, dir / "one", ctx, 1);
    const auto eight = augment_files(aug, inputs, dir / "eight", ctx, 8);
    write_manifest(dir / "one.csv", one);
    write_manifest(dir / "eight.csv", eight);
    CHECK(slurp(dir / "one.csv") == slurp(dir / "eight.csv"));
    CHECK(slurp(dir / "one.csv").rfind("patch_index,file,method,domain,target_slide,patch_seed\n0,p100.png,sva,", 0) ==
          0);
    for (const auto& in : inputs)
        CHECK(slurp(dir / "one" / in.filename()) == slurp(dir / "eight" / in.filename()));

    std::map<std::string, std::size_t> per_domain;
    for (const auto& row : one)
        ++per_domain[row.domain];
    CHECK(per_domain.size() == 3);
    for (const auto& [domain, count] : per_domain)
        CHECK(count == 8);

    inputs.push_back(dir / "in" / "missing.png");
    CHECK(error_of([&] { augment_files(aug, inputs, dir / "bad", ctx, 4); }) == Errc::Io);
}
