#include "stainforge/stats.hpp"

#include "stainforge/error.hpp"

#include <algorithm>
#include <cmath>

namespace stainforge {

double percentile_sorted(std::span<const double> sorted, double p)
{
    if (sorted.empty())
        throw Error(Errc::EmptyInput, "percentile of an empty sample");
    if (!(p >= 0.0 && p <= 100.0))
        throw Error(Errc::InvalidArgument, "percentile rank must lie in [0, 100]");
    const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double t = pos - static_cast<double>(lo);
    return std::clamp(sorted[lo] + (sorted[hi] - sorted[lo]) * t, sorted[lo], sorted[hi]);
}

} // namespace stainforge
