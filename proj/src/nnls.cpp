#include "stainforge/nnls.hpp"

#include "stainforge/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stainforge {

DenseMatrix::DenseMatrix(std::size_t r, std::size_t c, std::vector<double> v)
    : rows(r), cols(c), values(std::move(v))
{
    if (values.size() != rows * cols)
        throw Error(Errc::InvalidArgument, "matrix value count does not match its shape");
}

NnlsSolver::NnlsSolver(const DenseMatrix& a, NnlsOptions options)
    : rows_(a.rows), cols_(a.cols), max_iterations_(options.max_iterations_per_column * a.cols), a_(a.values),
      gram_(a.cols * a.cols, 0.0), h_(a.cols), w_(a.cols), z_(a.cols), passive_(a.cols), rejected_(a.cols),
      index_(a.cols), chol_(a.cols * a.cols), rhs_(a.cols), sol_(a.cols)
{
    if (rows_ < 1 || cols_ < 1)
        throw Error(Errc::InvalidArgument, "nnls requires at least one row and one column");
    if (a_.size() != rows_ * cols_)
        throw Error(Errc::InvalidArgument, "nnls matrix value count does not match its shape");
    for (double v : a_)
        if (!std::isfinite(v))
            throw Error(Errc::InvalidArgument, "nnls matrix has non-finite entries");

    double largest = 0.0;
    for (std::size_t i = 0; i < cols_; ++i) {
        for (std::size_t j = 0; j < cols_; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < rows_; ++r)
                s += a_[r * cols_ + i] * a_[r * cols_ + j];
            gram_[i * cols_ + j] = s;
            largest = std::max(largest, std::fabs(s));
        }
    }
    tolerance_ = 64.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(cols_) * largest;
}

void NnlsSolver::solve(std::span<const double> b, std::span<double> x)
{
    if (b.size() != rows_)
        throw Error(Errc::InvalidArgument, "nnls right-hand side has the wrong length");
    for (std::size_t j = 0; j < cols_; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows_; ++r)
            s += a_[r * cols_ + j] * b[r];
        h_[j] = s;
    }
    solve_normal(h_, x);
}

// Cholesky solve of G_PP z_P = h_P into z_ (zero outside P). Returns false if
// the passive columns are numerically dependent.
bool NnlsSolver::solve_passive(std::span<const double> h)
{
    std::size_t k = 0;
    for (std::size_t j = 0; j < cols_; ++j)
        if (passive_[j])
            index_[k++] = j;

    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = gram_[index_[i] * cols_ + index_[j]];
            for (std::size_t p = 0; p < j; ++p)
                s -= chol_[i * cols_ + p] * chol_[j * cols_ + p];
            if (i == j) {
                const double diag = gram_[index_[i] * cols_ + index_[i]];
                if (!(s > 1e3 * std::numeric_limits<double>::epsilon() * diag))
                    return false;
                chol_[i * cols_ + i] = std::sqrt(s);
            } else {
                chol_[i * cols_ + j] = s / chol_[j * cols_ + j];
            }
        }
    }

    const auto cholesky_solve = [&](std::span<double> v) {
        for (std::size_t i = 0; i < k; ++i) {
            double s = v[i];
            for (std::size_t p = 0; p < i; ++p)
                s -= chol_[i * cols_ + p] * v[p];
            v[i] = s / chol_[i * cols_ + i];
        }
        for (std::size_t i = k; i-- > 0;) {
            double s = v[i];
            for (std::size_t p = i + 1; p < k; ++p)
                s -= chol_[p * cols_ + i] * v[p];
            v[i] = s / chol_[i * cols_ + i];
        }
    };

    for (std::size_t i = 0; i < k; ++i)
        sol_[i] = h[index_[i]];
    cholesky_solve(std::span(sol_).first(k));

    // one refinement step
    for (std::size_t i = 0; i < k; ++i) {
        double r = h[index_[i]];
        for (std::size_t j = 0; j < k; ++j)
            r -= gram_[index_[i] * cols_ + index_[j]] * sol_[j];
        rhs_[i] = r;
    }
    cholesky_solve(std::span(rhs_).first(k));

    std::fill(z_.begin(), z_.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i)
        z_[index_[i]] = sol_[i] + rhs_[i];
    return true;
}

void NnlsSolver::solve_normal(std::span<const double> h, std::span<double> x)
{
    if (h.size() != cols_ || x.size() != cols_)
        throw Error(Errc::InvalidArgument, "nnls vector has the wrong length");

    std::fill(x.begin(), x.end(), 0.0);
    std::fill(passive_.begin(), passive_.end(), 0);
    std::fill(rejected_.begin(), rejected_.end(), 0);
    std::copy(h.begin(), h.end(), w_.begin());

    double h_scale = 0.0;
    for (double v : h)
        h_scale = std::max(h_scale, std::fabs(v));
    const double w_tolerance = std::max(tolerance_, 64.0 * std::numeric_limits<double>::epsilon() *
                                                        static_cast<double>(cols_) * h_scale);

    std::size_t iterations = 0;
    for (;;) {
        std::size_t entering = cols_;
        double best = w_tolerance;
        for (std::size_t j = 0; j < cols_; ++j) {
            if (!passive_[j] && !rejected_[j] && w_[j] > best) {
                best = w_[j];
                entering = j;
            }
        }
        if (entering == cols_)
            break;
        passive_[entering] = 1;

        for (bool first = true;; first = false) {
            if (++iterations > max_iterations_)
                throw Error(Errc::MaxIterationsExceeded,
                            "nnls did not converge within " + std::to_string(max_iterations_) + " iterations");
            // A dependent column, or one whose entering coefficient is not
            // positive through roundoff, would cycle; leave it active.
            if (!solve_passive(h) || (first && !(z_[entering] > 0.0))) {
                passive_[entering] = 0;
                rejected_[entering] = 1;
                break;
            }

            bool feasible = true;
            for (std::size_t j = 0; j < cols_; ++j)
                feasible = feasible && (!passive_[j] || z_[j] > 0.0);
            if (feasible) {
                std::copy(z_.begin(), z_.end(), x.begin());
                break;
            }

            double alpha = std::numeric_limits<double>::infinity();
            std::size_t blocking = cols_;
            for (std::size_t j = 0; j < cols_; ++j) {
                if (passive_[j] && z_[j] <= 0.0) {
                    const double step = x[j] / (x[j] - z_[j]);
                    if (step < alpha) {
                        alpha = step;
                        blocking = j;
                    }
                }
            }
            for (std::size_t j = 0; j < cols_; ++j) {
                if (!passive_[j])
                    continue;
                x[j] += alpha * (z_[j] - x[j]);
                if (j == blocking || x[j] <= 0.0) {
                    x[j] = 0.0;
                    passive_[j] = 0;
                }
            }
        }

        for (std::size_t i = 0; i < cols_; ++i) {
            double s = h[i];
            for (std::size_t j = 0; j < cols_; ++j)
                s -= gram_[i * cols_ + j] * x[j];
            w_[i] = s;
        }
    }
}

std::vector<double> nnls(const DenseMatrix& a, std::span<const double> b, NnlsOptions options)
{
    NnlsSolver solver(a, options);
    std::vector<double> x(a.cols, 0.0);
    solver.solve(b, x);
    return x;
}

} // namespace stainforge
