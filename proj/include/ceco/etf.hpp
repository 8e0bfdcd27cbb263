#pragma once

// Simplex equiangular tight frames: construction, verification and the
// max-pairwise-cosine separation functional.
//
// A simplex ETF of K vectors in R^d (d >= K) is
//
//     M = sqrt(K / (K - 1)) * U * (I_K - 1_K 1_K^T / K),   U^T U = I_K,
//
// so every column has unit norm and every pair of columns has inner product
// -1/(K-1). A frame scaled by alpha has norms alpha and inner products
// -alpha^2/(K-1). For unit-norm columns, -1/(K-1) is the smallest value the
// largest pairwise cosine can take, and it is attained only by simplex ETFs.

#include "ceco/linalg.hpp"

#include <cstdint>
#include <iosfwd>

namespace ceco {

inline constexpr double kDefaultEtfTolerance = 1e-8;

struct OrthonormalBasis {
    Matrix columns; // d x K, columns^T * columns = I_K

    Index dim() const { return columns.rows(); }
    Index classes() const { return columns.cols(); }
};

struct EtfFrame {
    Matrix matrix; // d x K, alpha * M
    double alpha = 1.0;

    Index dim() const { return matrix.rows(); }
    Index classes() const { return matrix.cols(); }
};

struct EtfCheckReport {
    double max_norm_deviation = 0.0;   // relative to the mean column norm
    double max_offdiag_deviation = 0.0; // of pairwise cosines from -1/(K-1)
    double max_pairwise_cosine = 0.0;
    bool is_etf = false;
};

// Seeded Gaussian d x K matrix orthonormalized by Gram-Schmidt with a second
// re-orthogonalization pass. Throws DimensionError when d < K.
OrthonormalBasis make_rotation(Index d, Index K, std::uint64_t seed);

EtfFrame make_etf(Index d, Index K, double alpha, std::uint64_t seed);

// Compares column norms with their mean and normalized off-diagonal Gram
// entries with -1/(K-1). Works for any alpha since the angle test is made
// on cosines.
EtfCheckReport verify_etf(const Matrix& W, double tol = kDefaultEtfTolerance);

double max_pairwise_cosine(const Matrix& W);

// Squared distance between every pair of frame columns; for a frame scaled
// by alpha it is 2 * alpha^2 * K / (K - 1).
Matrix pairwise_squared_distances(const Matrix& W);

// Text format: "d K alpha" on the first line, then d rows of K numbers,
// all with 17 significant digits.
void write_frame(std::ostream& out, const EtfFrame& frame);
EtfFrame read_frame(std::istream& in);

} // namespace ceco
