#include "ceco/etf.hpp"

#include "ceco/errors.hpp"
#include "ceco/io.hpp"
#include "ceco/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

namespace ceco {

namespace {

void require_etf_shape(Index d, Index K) {
    if (K < 2) {
        throw DomainError(fmt::format("a simplex ETF needs K >= 2 classes (got K = {})", K));
    }
    if (d < K) {
        throw DimensionError(fmt::format("a simplex ETF needs d >= K (got d = {}, K = {})", d, K));
    }
}

Vector column_norms(const Matrix& W) {
    Vector norms = W.colwise().stableNorm().transpose();
    for (Index k = 0; k < norms.size(); ++k) {
        if (!(norms[k] > 0.0)) {
            throw DegenerateColumnError(fmt::format("column {} has zero norm", k));
        }
    }
    return norms;
}

// Gram matrix of the normalized columns.
Matrix cosine_gram(const Matrix& W) {
    const Vector norms = column_norms(W);
    Matrix unit = W;
    for (Index k = 0; k < W.cols(); ++k) {
        unit.col(k) /= norms[k];
    }
    return unit.transpose() * unit;
}

} // namespace

OrthonormalBasis make_rotation(Index d, Index K, std::uint64_t seed) {
    if (K < 1 || d < 1) {
        throw DimensionError(fmt::format("rotation needs positive sizes (got d = {}, K = {})", d, K));
    }
    if (d < K) {
        throw DimensionError(fmt::format("rotation needs d >= K (got d = {}, K = {})", d, K));
    }
    Rng rng(seed);
    Matrix U(d, K);
    for (Index k = 0; k < K; ++k) {
        for (Index i = 0; i < d; ++i) {
            U(i, k) = rng.normal();
        }
    }
    // Modified Gram-Schmidt, run twice per column ("twice is enough").
    for (Index k = 0; k < K; ++k) {
        for (int pass = 0; pass < 2; ++pass) {
            for (Index j = 0; j < k; ++j) {
                U.col(k) -= U.col(j).dot(U.col(k)) * U.col(j);
            }
        }
        const double norm = U.col(k).norm();
        if (!(norm > 1e-8)) {
            throw NumericError("rotation sample is rank deficient; try another seed");
        }
        U.col(k) /= norm;
    }
    return OrthonormalBasis{std::move(U)};
}

EtfFrame make_etf(Index d, Index K, double alpha, std::uint64_t seed) {
    require_etf_shape(d, K);
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw DomainError(fmt::format("frame scale alpha must be positive (got {})", alpha));
    }
    const OrthonormalBasis basis = make_rotation(d, K, seed);
    const double kd = static_cast<double>(K);
    Matrix centering = Matrix::Identity(K, K) - Matrix::Constant(K, K, 1.0 / kd);
    Matrix M = std::sqrt(kd / (kd - 1.0)) * basis.columns * centering;
    return EtfFrame{alpha * M, alpha};
}

EtfCheckReport verify_etf(const Matrix& W, double tol) {
    const Index K = W.cols();
    if (K < 2) {
        throw DomainError(fmt::format("ETF verification needs K >= 2 columns (got {})", K));
    }
    const Vector norms = column_norms(W);
    const double mean_norm = norms.mean();
    const double target = -1.0 / static_cast<double>(K - 1);
    const Matrix cos = cosine_gram(W);

    EtfCheckReport report;
    report.max_norm_deviation = ((norms.array() - mean_norm).abs() / mean_norm).maxCoeff();
    report.max_pairwise_cosine = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < K; ++i) {
        for (Index j = 0; j < K; ++j) {
            if (i == j) {
                continue;
            }
            report.max_offdiag_deviation =
                std::max(report.max_offdiag_deviation, std::abs(cos(i, j) - target));
            report.max_pairwise_cosine = std::max(report.max_pairwise_cosine, cos(i, j));
        }
    }
    report.is_etf = report.max_norm_deviation <= tol && report.max_offdiag_deviation <= tol;
    return report;
}

double max_pairwise_cosine(const Matrix& W) {
    const Index K = W.cols();
    if (K < 2) {
        throw DomainError(fmt::format("pairwise cosine needs at least 2 columns (got {})", K));
    }
    const Matrix cos = cosine_gram(W);
    double best = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < K; ++i) {
        for (Index j = i + 1; j < K; ++j) {
            best = std::max(best, cos(i, j));
        }
    }
    return best;
}

Matrix pairwise_squared_distances(const Matrix& W) {
    const Index K = W.cols();
    Matrix out(K, K);
    for (Index i = 0; i < K; ++i) {
        for (Index j = 0; j < K; ++j) {
            out(i, j) = (W.col(i) - W.col(j)).squaredNorm();
        }
    }
    return out;
}

void write_frame(std::ostream& out, const EtfFrame& frame) {
    out << frame.dim() << ' ' << frame.classes() << ' ' << format_number(frame.alpha) << '\n';
    for (Index i = 0; i < frame.dim(); ++i) {
        for (Index k = 0; k < frame.classes(); ++k) {
            if (k > 0) {
                out << ' ';
            }
            out << format_number(frame.matrix(i, k));
        }
        out << '\n';
    }
}

EtfFrame read_frame(std::istream& in) {
    LineReader reader(in);
    const auto header = reader.tokens("header 'd K alpha'");
    if (header.size() != 3) {
        throw ParseError(reader.line(), "header must be 'd K alpha'");
    }
    const long long d = reader.to_integer(header[0]);
    const long long K = reader.to_integer(header[1]);
    const double alpha = reader.to_double(header[2]);
    if (d < 1 || K < 1) {
        throw ParseError(reader.line(), "frame sizes must be positive");
    }
    if (!(alpha > 0.0)) {
        throw ParseError(reader.line(), "alpha must be positive");
    }
    EtfFrame frame{Matrix(d, K), alpha};
    for (long long i = 0; i < d; ++i) {
        const auto row = reader.tokens(fmt::format("frame row {} of {}", i + 1, d));
        if (static_cast<long long>(row.size()) != K) {
            throw ParseError(reader.line(), fmt::format("expected {} values, found {}", K, row.size()));
        }
        for (long long k = 0; k < K; ++k) {
            frame.matrix(i, k) = reader.to_double(row[static_cast<std::size_t>(k)]);
        }
    }
    if (!reader.at_end()) {
        throw ParseError(reader.line() + 1, "trailing content after frame rows");
    }
    return frame;
}

} // namespace ceco
