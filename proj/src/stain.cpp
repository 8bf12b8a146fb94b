#include "stainforge/stain.hpp"

#include "stainforge/error.hpp"
#include "stainforge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

namespace stainforge {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Exact NNLS for two unit columns. The Gram matrix is positive definite because
// StainMatrix rejects parallel columns, so the KKT point is unique and is one of
// the four supports {h, e}, {h}, {e}, {}; this matches the active-set solver.
class TwoStainNnls {
public:
    TwoStainNnls(const Vec3& h, const Vec3& e)
        : g00_(dot(h, h)), g01_(dot(h, e)), g11_(dot(e, e)), det_(g00_ * g11_ - g01_ * g01_)
    {
    }

    // n0 = h . od, n1 = e . od
    void solve(double n0, double n1, double* x) const noexcept
    {
        const double xh = (g11_ * n0 - g01_ * n1) / det_;
        const double xe = (g00_ * n1 - g01_ * n0) / det_;
        if (xh >= 0.0 && xe >= 0.0) {
            x[0] = xh;
            x[1] = xe;
            return;
        }
        const double only_h = std::max(0.0, n0 / g00_);
        if (only_h > 0.0 && n1 - g01_ * only_h <= 0.0) {
            x[0] = only_h;
            x[1] = 0.0;
            return;
        }
        const double only_e = std::max(0.0, n1 / g11_);
        if (only_e > 0.0 && n0 - g01_ * only_e <= 0.0) {
            x[0] = 0.0;
            x[1] = only_e;
            return;
        }
        x[0] = 0.0;
        x[1] = 0.0;
    }

private:
    double g00_, g01_, g11_, det_;
};

struct EigenPair {
    double value;
    Vec3 vector;
};

// Cyclic Jacobi on a symmetric 3x3; returns pairs sorted by descending value.
std::array<EigenPair, 3> symmetric_eigen(Mat3 a)
{
    Mat3 v = Mat3::identity();
    for (int sweep = 0; sweep < 64; ++sweep) {
        const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
        const double diag = a(0, 0) * a(0, 0) + a(1, 1) * a(1, 1) + a(2, 2) * a(2, 2);
        if (off <= 1e-32 * diag || off == 0.0)
            break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (a(p, q) == 0.0)
                    continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = std::copysign(1.0, theta) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < 3; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < 3; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < 3; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::array<EigenPair, 3> pairs;
    for (int i = 0; i < 3; ++i)
        pairs[i] = {a(i, i), {v(0, i), v(1, i), v(2, i)}};
    std::sort(pairs.begin(), pairs.end(), [](const EigenPair& x, const EigenPair& y) { return x.value > y.value; });
    return pairs;
}

// Vectors already unit to within a few ulps are returned unchanged so that
// normalization is idempotent (serialized libraries reload bit-exactly).
Vec3 normalized(const Vec3& v)
{
    const double n = norm(v);
    if (std::fabs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon())
        return v;
    return {v[0] / n, v[1] / n, v[2] / n};
}

// Direction at angle phi in the (e1, e2) plane, flipped into the positive
// octant; components that are negative only through projection are zeroed.
Vec3 back_project(const Vec3& e1, const Vec3& e2, double phi)
{
    Vec3 v{};
    for (int i = 0; i < 3; ++i)
        v[i] = e1[i] * std::cos(phi) + e2[i] * std::sin(phi);
    if (v[0] + v[1] + v[2] < 0.0)
        v = {-v[0], -v[1], -v[2]};
    for (double& c : v)
        c = std::max(c, 0.0);
    if (!(norm(v) > 0.0))
        throw Error(Errc::DegenerateDistribution, "extreme stain direction has no positive component");
    return normalized(v);
}

} // namespace

double angle_deg(const Vec3& a, const Vec3& b) noexcept
{
    // atan2 form stays accurate for nearly parallel vectors
    return std::atan2(norm(cross(a, b)), dot(a, b)) * kRadToDeg;
}

StainMatrix StainMatrix::from_columns(const Vec3& hematoxylin, const Vec3& eosin, double min_angle_deg)
{
    for (const Vec3* column : {&hematoxylin, &eosin}) {
        for (double c : *column) {
            if (!std::isfinite(c) || c < 0.0)
                throw Error(Errc::InvalidArgument, "stain vector components must be finite and non-negative");
        }
        if (!(norm(*column) > 0.0))
            throw Error(Errc::InvalidArgument, "stain vector must be non-zero");
    }
    StainMatrix m(normalized(hematoxylin), normalized(eosin));
    if (m.separation_deg() < min_angle_deg)
        throw Error(Errc::InvalidArgument, "stain vectors are " + std::to_string(m.separation_deg()) +
                                               " degrees apart, below the minimum of " +
                                               std::to_string(min_angle_deg));
    return m;
}

double StainMatrix::separation_deg() const noexcept { return angle_deg(h_, e_); }

void EstimationParams::validate() const
{
    if (!(beta > 0.0 && beta < 3.0))
        throw Error(Errc::InvalidArgument, "beta must lie in (0, 3)");
    if (!(alpha > 0.0 && alpha < 50.0))
        throw Error(Errc::InvalidArgument, "alpha must lie in (0, 50)");
    if (max_pixels < 1 || min_pixels < 1)
        throw Error(Errc::InvalidArgument, "pixel limits must be positive");
    if (!(min_plane_ratio >= 0.0 && min_plane_ratio < 1.0))
        throw Error(Errc::InvalidArgument, "min_plane_ratio must lie in [0, 1)");
}

StainEstimate estimate_stain_vectors_detailed(std::span<const double> od_pixels, const EstimationParams& params,
                                              Rng* rng)
{
    params.validate();
    if (od_pixels.size() % 3 != 0)
        throw Error(Errc::InvalidArgument, "OD pixel buffer length is not a multiple of 3");

    std::vector<std::size_t> kept;
    const std::size_t total = od_pixels.size() / 3;
    for (std::size_t i = 0; i < total; ++i) {
        const double* p = od_pixels.data() + 3 * i;
        if (p[0] > params.beta && p[1] > params.beta && p[2] > params.beta)
            kept.push_back(i);
    }
    if (kept.size() < params.min_pixels)
        throw Error(Errc::InsufficientTissue, std::to_string(kept.size()) + " pixels above the OD threshold " +
                                                  std::to_string(params.beta) + ", need " +
                                                  std::to_string(params.min_pixels));

    if (kept.size() > params.max_pixels) {
        Rng fallback = Rng::derive(0, 0);
        Rng& gen = rng ? *rng : fallback;
        // partial Fisher-Yates: the first max_pixels slots become the sample
        for (std::size_t i = 0; i < params.max_pixels; ++i) {
            const auto j = i + static_cast<std::size_t>(gen.uniform_index(kept.size() - i));
            std::swap(kept[i], kept[j]);
        }
        kept.resize(params.max_pixels);
        std::sort(kept.begin(), kept.end());
    }

    Mat3 scatter{};
    for (const std::size_t i : kept) {
        const double* p = od_pixels.data() + 3 * i;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                scatter(r, c) += p[r] * p[c];
    }
    const double count = static_cast<double>(kept.size());
    for (auto& row : scatter.m)
        for (double& v : row)
            v /= count;

    const auto eigen = symmetric_eigen(scatter);
    if (!(eigen[0].value > 0.0) || eigen[1].value / eigen[0].value < params.min_plane_ratio)
        throw Error(Errc::DegenerateDistribution, "OD scatter is effectively rank one (eigenvalue ratio " +
                                                      std::to_string(eigen[1].value / eigen[0].value) + ")");

    Vec3 e1 = eigen[0].vector;
    Vec3 e2 = eigen[1].vector;
    if (e1[0] + e1[1] + e1[2] < 0.0)
        e1 = {-e1[0], -e1[1], -e1[2]};
    if (e2[0] < 0.0)
        e2 = {-e2[0], -e2[1], -e2[2]};

    std::vector<double> angles;
    angles.reserve(kept.size());
    for (const std::size_t i : kept) {
        const Vec3 p{od_pixels[3 * i], od_pixels[3 * i + 1], od_pixels[3 * i + 2]};
        angles.push_back(std::atan2(dot(p, e2), dot(p, e1)));
    }
    std::sort(angles.begin(), angles.end());
    const double phi_low = percentile_sorted(angles, params.alpha);
    const double phi_high = percentile_sorted(angles, 100.0 - params.alpha);

    Vec3 first = back_project(e1, e2, phi_low);
    Vec3 second = back_project(e1, e2, phi_high);
    if (std::fabs(first[0] - second[0]) < 1e-6)
        throw Error(Errc::AmbiguousOrdering, "stain vectors have equal red absorbance; cannot tell H from E");
    if (first[0] < second[0])
        std::swap(first, second);

    if (angle_deg(first, second) < params.min_angle_deg)
        throw Error(Errc::DegenerateDistribution, "estimated stain vectors are only " +
                                                      std::to_string(angle_deg(first, second)) + " degrees apart");
    return {StainMatrix::from_columns(first, second, params.min_angle_deg), kept.size()};
}

StainMatrix estimate_stain_vectors(std::span<const double> od_pixels, const EstimationParams& params, Rng* rng)
{
    return estimate_stain_vectors_detailed(od_pixels, params, rng).stains;
}

ConcentrationMap deconvolve(const OdPatch& od, const StainMatrix& stains, OdPatch* residual)
{
    if (od.data.size() != od.pixel_count() * 3)
        throw Error(Errc::InvalidArgument, "OD patch buffer does not match its dimensions");

    const Vec3& h = stains.hematoxylin();
    const Vec3& e = stains.eosin();
    const TwoStainNnls solver(h, e);

    ConcentrationMap conc{od.width, od.height, std::vector<double>(od.pixel_count() * 2, 0.0)};
    if (residual)
        *residual = OdPatch{od.width, od.height, od.i0, std::vector<double>(od.data.size(), 0.0)};

    for (std::size_t i = 0; i < od.pixel_count(); ++i) {
        const double* p = od.data.data() + 3 * i;
        double* c = conc.data.data() + 2 * i;
        solver.solve(h[0] * p[0] + h[1] * p[1] + h[2] * p[2], e[0] * p[0] + e[1] * p[1] + e[2] * p[2], c);
        if (residual) {
            double* r = residual->data.data() + 3 * i;
            for (int k = 0; k < 3; ++k)
                r[k] = p[k] - (h[k] * c[0] + e[k] * c[1]);
        }
    }
    return conc;
}

RgbPatch reconstruct(const ConcentrationMap& conc, const StainMatrix& target, double i0, const OdPatch* residual)
{
    if (conc.data.size() != conc.pixel_count() * 2)
        throw Error(Errc::InvalidArgument, "concentration map buffer does not match its dimensions");
    if (residual && (residual->width != conc.width || residual->height != conc.height))
        throw Error(Errc::InvalidArgument, "residual dimensions differ from the concentration map");

    const Vec3& h = target.hematoxylin();
    const Vec3& e = target.eosin();
    std::vector<std::uint8_t> out(conc.pixel_count() * 3);
    for (std::size_t i = 0; i < conc.pixel_count(); ++i) {
        const double ch = conc.data[2 * i];
        const double ce = conc.data[2 * i + 1];
        for (int k = 0; k < 3; ++k) {
            double od = h[k] * ch + e[k] * ce;
            if (residual)
                od += residual->data[3 * i + k];
            out[3 * i + k] = od_to_intensity(od, i0);
        }
    }
    return RgbPatch(conc.width, conc.height, std::move(out), Unspecified{});
}

} // namespace stainforge
