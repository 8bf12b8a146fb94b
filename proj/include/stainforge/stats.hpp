#pragma once

#include <span>

namespace stainforge {

/// Percentile `p` in [0, 100] of ascending-sorted `sorted`, by linear
/// interpolation between closest ranks: position p/100 * (n - 1).
double percentile_sorted(std::span<const double> sorted, double p);

} // namespace stainforge
