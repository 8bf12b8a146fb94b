#include "stainforge/error.hpp"
#include "stainforge/nnls.hpp"
#include "stainforge/stain.hpp"

#include "synthetic.hpp"

#include <doctest.h>

#include <cmath>

using namespace stainforge;
using testing::reference_stains;

namespace {

Errc estimate_error(std::span<const double> od, const EstimationParams& params = {})
{
    try {
        estimate_stain_vectors(od, params);
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("estimate_stain_vectors did not throw");
    return Errc::InvalidArgument;
}

Vec3 unit(Vec3 v)
{
    const double n = norm(v);
    return {v[0] / n, v[1] / n, v[2] / n};
}

/// Pure and mixed pixels of two stains with every OD component above `floor`.
std::vector<double> dense_tissue(const StainMatrix& s, std::size_t n, Rng& rng, double floor)
{
    std::vector<double> out;
    const auto all = testing::synth_od_pixels(s, n, rng, 0.0);
    for (std::size_t i = 0; i < all.size(); i += 3)
        if (all[i] > floor && all[i + 1] > floor && all[i + 2] > floor)
            out.insert(out.end(), all.begin() + i, all.begin() + i + 3);
    return out;
}

} // namespace

TEST_CASE("StainMatrix normalizes and validates")
{
    const StainMatrix s = StainMatrix::from_columns({2, 0, 0}, {0, 3, 4});
    CHECK(std::abs(norm(s.hematoxylin()) - 1.0) <= 1e-9);
    CHECK(std::abs(norm(s.eosin()) - 1.0) <= 1e-9);
    CHECK(s.eosin()[1] == doctest::Approx(0.6));
    CHECK(s.separation_deg() == doctest::Approx(90.0));
    CHECK(s.column(0) == s.hematoxylin());

    CHECK_THROWS_AS(StainMatrix::from_columns({-0.1, 1, 1}, {1, 0, 0}), Error);
    CHECK_THROWS_AS(StainMatrix::from_columns({0, 0, 0}, {1, 0, 0}), Error);
    CHECK_THROWS_AS(StainMatrix::from_columns({1, 1, 1}, {1, 1, 1.001}), Error);
    CHECK_THROWS_AS(StainMatrix::from_columns({NAN, 1, 1}, {1, 0, 0}), Error);

    // normalizing an already normalized matrix changes nothing
    const StainMatrix ref = reference_stains();
    CHECK(StainMatrix::from_columns(ref.hematoxylin(), ref.eosin()) == ref);
}

TEST_CASE("estimation parameters are validated")
{
    EstimationParams p;
    CHECK_NOTHROW(p.validate());
    p.beta = 0.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.alpha = 50.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.max_pixels = 0;
    CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("recovers known stains from 50,000 noisy pixels")
{
    Rng rng = Rng::derive(2024, 1);
    for (int trial = 0; trial < 5; ++trial) {
        const StainMatrix truth = trial == 0 ? reference_stains() : testing::perturbed_stains(rng, 8.0);
        const auto od = testing::synth_od_pixels(truth, 50000, rng, 1e-3);
        const StainEstimate est = estimate_stain_vectors_detailed(od, {});
        CHECK(angle_deg(est.stains.hematoxylin(), truth.hematoxylin()) <= 2.0);
        CHECK(angle_deg(est.stains.eosin(), truth.eosin()) <= 2.0);
        CHECK(est.pixels_used > 10000);
        for (int k = 0; k < 3; ++k) {
            CHECK(est.stains.hematoxylin()[k] >= 0.0);
            CHECK(est.stains.eosin()[k] >= 0.0);
        }
    }
}

TEST_CASE("estimation failure modes")
{
    SUBCASE("all pixels below beta")
    {
        const std::vector<double> faint(3 * 500, 0.1);
        CHECK(estimate_error(faint) == Errc::InsufficientTissue);
    }
    SUBCASE("fewer than 100 tissue pixels")
    {
        Rng rng(1);
        auto od = dense_tissue(reference_stains(), 300, rng, 0.2);
        od.resize(3 * 99);
        CHECK(estimate_error(od) == Errc::InsufficientTissue);
    }
    SUBCASE("rank-one distribution")
    {
        const Vec3 v = unit({0.6, 0.7, 0.4});
        std::vector<double> od;
        for (int i = 1; i <= 1000; ++i)
            for (int k = 0; k < 3; ++k)
                od.push_back(v[k] * (0.5 + i * 1e-3));
        CHECK(estimate_error(od) == Errc::DegenerateDistribution);
    }
    SUBCASE("equal red absorbance")
    {
        const StainMatrix s = StainMatrix::from_columns({0.6, 0.64, 0.48}, {0.6, 0.48, 0.64});
        Rng rng(3);
        std::vector<double> od;
        for (int i = 0; i < 4000; ++i) {
            const double u = rng.uniform();
            const double ch = u < 0.2 ? rng.uniform(0.5, 2.0) : (u < 0.4 ? 0.0 : rng.uniform(0.5, 1.2));
            const double ce = u < 0.2 ? 0.0 : (u < 0.4 ? rng.uniform(0.5, 2.0) : rng.uniform(0.5, 1.2));
            for (int k = 0; k < 3; ++k)
                od.push_back(s.hematoxylin()[k] * ch + s.eosin()[k] * ce);
        }
        CHECK(estimate_error(od) == Errc::AmbiguousOrdering);
    }
    SUBCASE("buffer not a multiple of three")
    {
        CHECK(estimate_error(std::vector<double>(301, 1.0)) == Errc::InvalidArgument);
    }
}

TEST_CASE("estimation is invariant to positive scaling")
{
    Rng rng(17);
    const auto od = dense_tissue(reference_stains(), 20000, rng, 0.2);
    const StainMatrix base = estimate_stain_vectors(od);
    for (const double scale : {1.7, 3.0}) {
        std::vector<double> scaled = od;
        for (auto& v : scaled)
            v *= scale;
        const StainMatrix s = estimate_stain_vectors(scaled);
        CHECK(angle_deg(s.hematoxylin(), base.hematoxylin()) <= 1e-6);
        CHECK(angle_deg(s.eosin(), base.eosin()) <= 1e-6);
    }
}

TEST_CASE("estimation is invariant to pixel order")
{
    Rng rng(23);
    auto od = testing::synth_od_pixels(testing::perturbed_stains(rng, 5.0), 20000, rng, 1e-3);
    const StainMatrix base = estimate_stain_vectors(od);
    std::vector<std::array<double, 3>> triples(od.size() / 3);
    for (std::size_t i = 0; i < triples.size(); ++i)
        triples[i] = {od[3 * i], od[3 * i + 1], od[3 * i + 2]};
    rng.shuffle(std::span(triples));
    for (std::size_t i = 0; i < triples.size(); ++i)
        for (int k = 0; k < 3; ++k)
            od[3 * i + k] = triples[i][k];
    const StainMatrix s = estimate_stain_vectors(od);
    CHECK(angle_deg(s.hematoxylin(), base.hematoxylin()) <= 1e-6);
    CHECK(angle_deg(s.eosin(), base.eosin()) <= 1e-6);
}

TEST_CASE("subsampling is seeded")
{
    Rng data_rng(5);
    const StainMatrix truth = reference_stains();
    const auto od = testing::synth_od_pixels(truth, 30000, data_rng, 1e-3);
    EstimationParams p;
    p.max_pixels = 5000;
    Rng a(11), b(11);
    const StainEstimate ea = estimate_stain_vectors_detailed(od, p, &a);
    const StainEstimate eb = estimate_stain_vectors_detailed(od, p, &b);
    CHECK(ea.stains == eb.stains);
    CHECK(ea.pixels_used == 5000);
    CHECK(angle_deg(ea.stains.hematoxylin(), truth.hematoxylin()) <= 2.0);
}

TEST_CASE("deconvolve examples")
{
    const StainMatrix s = reference_stains();
    const Vec3& h = s.hematoxylin();
    const Vec3& e = s.eosin();
    OdPatch od{3, 1, kDefaultI0, {}};
    for (int k = 0; k < 3; ++k)
        od.data.push_back(2.0 * h[k]);
    for (int k = 0; k < 3; ++k)
        od.data.push_back(0.0);
    for (int k = 0; k < 3; ++k)
        od.data.push_back(1.3 * h[k] + 0.4 * e[k]);

    OdPatch residual;
    const ConcentrationMap c = deconvolve(od, s, &residual);
    CHECK(c.data[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(c.data[1]) <= 1e-12);
    CHECK(c.data[2] == 0.0);
    CHECK(c.data[3] == 0.0);
    CHECK(std::abs(c.data[4] - 1.3) <= 1e-8);
    CHECK(std::abs(c.data[5] - 0.4) <= 1e-8);
    for (const double r : residual.data)
        CHECK(std::abs(r) <= 1e-12);
}

TEST_CASE("concentrations are never negative")
{
    Rng rng(12);
    const RgbPatch patch = testing::random_patch(40, 40, rng);
    OdPatch residual;
    const ConcentrationMap c = deconvolve(rgb_to_od(patch), reference_stains(), &residual);
    const OdPatch od = rgb_to_od(patch);
    const StainMatrix ref = reference_stains();
    const Vec3& h = ref.hematoxylin();
    const Vec3& e = ref.eosin();
    for (std::size_t i = 0; i < c.pixel_count(); ++i) {
        CHECK(c.data[2 * i] >= 0.0);
        CHECK(c.data[2 * i + 1] >= 0.0);
        for (int k = 0; k < 3; ++k)
            CHECK(residual.data[3 * i + k] ==
                  doctest::Approx(od.data[3 * i + k] - h[k] * c.data[2 * i] - e[k] * c.data[2 * i + 1]));
    }
}

TEST_CASE("deconvolve agrees with the general active-set solver")
{
    Rng rng(71);
    for (int trial = 0; trial < 20; ++trial) {
        const StainMatrix s = testing::perturbed_stains(rng, 10.0);
        const Vec3& h = s.hematoxylin();
        const Vec3& e = s.eosin();
        NnlsSolver solver(DenseMatrix(3, 2, {h[0], e[0], h[1], e[1], h[2], e[2]}));
        // random 8-bit pixels reach every support: both stains, one stain, none
        RgbPatch patch = testing::random_patch(64, 16, rng);
        patch.set_pixel(0, 0, {255, 255, 255});
        const OdPatch od = rgb_to_od(patch);
        const ConcentrationMap c = deconvolve(od, s);
        std::array<int, 4> supports{};
        for (std::size_t i = 0; i < od.pixel_count(); ++i) {
            std::array<double, 2> want{};
            solver.solve(std::span(od.data).subspan(3 * i, 3), want);
            CHECK(std::abs(c.data[2 * i] - want[0]) <= 1e-12);
            CHECK(std::abs(c.data[2 * i + 1] - want[1]) <= 1e-12);
            ++supports[(want[0] > 0) * 2 + (want[1] > 0)];
        }
        if (trial == 0)
            for (const int n : supports)
                CHECK(n > 0);
    }
}

TEST_CASE("reconstruct examples")
{
    const ConcentrationMap zeros{4, 2, std::vector<double>(16, 0.0)};
    const RgbPatch white = reconstruct(zeros, reference_stains());
    for (const auto v : white.data())
        CHECK(v == 255);

    const Vec3 col = unit({0.65, 0.70, 0.29});
    const StainMatrix target = StainMatrix::from_columns(col, {0.07, 0.99, 0.11});
    const RgbPatch one = reconstruct(ConcentrationMap{1, 1, {1.0, 0.0}}, target);
    for (int k = 0; k < 3; ++k)
        CHECK(one.pixel(0, 0)[k] == od_to_intensity(col[k]));
}

TEST_CASE("reconstructing with the source stains is the identity on two-stain patches")
{
    Rng rng(44);
    for (int trial = 0; trial < 5; ++trial) {
        const StainMatrix s = testing::perturbed_stains(rng, 6.0);
        const RgbPatch patch = testing::synth_patch(s, 48, 48, rng);
        const RgbPatch back = reconstruct(deconvolve(rgb_to_od(patch), s), s);
        for (std::size_t i = 0; i < patch.data().size(); ++i)
            CHECK(std::abs(int(back.data()[i]) - int(patch.data()[i])) <= 1);
    }
}
