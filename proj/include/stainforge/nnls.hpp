#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stainforge {

/// Dense row-major matrix, used for small least-squares systems.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}
    DenseMatrix(std::size_t r, std::size_t c, std::vector<double> v);

    double operator()(std::size_t r, std::size_t c) const noexcept { return values[r * cols + c]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return values[r * cols + c]; }
};

struct NnlsOptions {
    /// Iteration cap as a multiple of the column count.
    std::size_t max_iterations_per_column = 3;
};

/// Lawson-Hanson active-set solver for min ||A x - b|| subject to x >= 0.
///
/// The solver works on the normal-equation data G = A^T A and h = A^T b, so a
/// single instance prepared for a fixed A can be reused for many right-hand
/// sides (one per pixel in stain deconvolution). Passive-set subproblems are
/// solved by Cholesky with one step of iterative refinement; columns whose
/// pivot collapses are left in the active set.
///
/// Not thread-safe: holds scratch buffers. Use one instance per thread.
class NnlsSolver {
public:
    explicit NnlsSolver(const DenseMatrix& a, NnlsOptions options = {});

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    /// Solves for right-hand side `b` (size rows()) into `x` (size cols()).
    /// Throws Error(MaxIterationsExceeded) if the iteration cap is hit.
    void solve(std::span<const double> b, std::span<double> x);

    /// Same, with h = A^T b supplied directly.
    void solve_normal(std::span<const double> h, std::span<double> x);

private:
    bool solve_passive(std::span<const double> h);

    std::size_t rows_;
    std::size_t cols_;
    std::size_t max_iterations_;
    std::vector<double> a_;     // row-major copy of A
    std::vector<double> gram_;  // A^T A
    double tolerance_;

    // scratch
    std::vector<double> h_;
    std::vector<double> w_;
    std::vector<double> z_;
    std::vector<char> passive_;
    std::vector<char> rejected_;
    std::vector<std::size_t> index_;
    std::vector<double> chol_;
    std::vector<double> rhs_;
    std::vector<double> sol_;
};

/// One-shot convenience wrapper around NnlsSolver.
std::vector<double> nnls(const DenseMatrix& a, std::span<const double> b, NnlsOptions options = {});

} // namespace stainforge
