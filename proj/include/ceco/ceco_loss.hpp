#pragma once

// Two-branch training loss: per-pixel cross-entropy on the pixel classifier
// plus a cross-entropy on per-class feature centers scored against a
// center classifier (a fixed simplex ETF in the default configuration).
//
//   L_total = L_PR + lambda * L_CR
//   L_PR    = mean_i  -log softmax(z_i^T W_pr)[y_i]
//   L_CR    = sum_k   -log softmax(zbar_k^T W)[k]       (present classes only)
//
// Gradients, with p_k(z) = softmax(z^T W)[k]:
//   dL_CR/dw_k = (p_k(zbar_k) - 1) zbar_k + sum_{k' != k} p_k(zbar_k') zbar_k'
//   dL_CR/dz_i = (1/n_k) sum_k' p_k'(zbar_k) (w_k' - w_k),   y_i = k

#include "ceco/etf.hpp"
#include "ceco/linalg.hpp"
#include "ceco/nc_metrics.hpp"

#include <vector>

namespace ceco {

struct CenterBatch {
    Matrix centers;                // P x d, one row per present class
    std::vector<int> center_labels; // class index of each center, ascending
    std::vector<Index> counts;     // n_k of each center
    std::vector<int> source_map;   // input row -> center row

    Index num_centers() const { return centers.rows(); }
    Index dim() const { return centers.cols(); }
    Index num_rows() const { return static_cast<Index>(source_map.size()); }
};

struct LossBreakdown {
    double pr_loss = 0.0;
    double cr_loss = 0.0;
    double total = 0.0;
    double lambda = 0.0;
};

CenterBatch center_pool(const FeatureBatch& batch);

// Softmax of a logit vector with max-logit subtraction. Throws NumericError
// on non-finite logits.
Vector softmax(const Vector& logits);

// softmax(W^T z).
Vector softmax_probs(const Vector& z, const Matrix& W);

double cr_loss(const CenterBatch& cb, const Matrix& W);
double cr_loss(const CenterBatch& cb, const EtfFrame& frame);

// d x K gradient of cr_loss with respect to W.
Matrix cr_grad_classifier(const CenterBatch& cb, const Matrix& W);

// N x d gradient of cr_loss(center_pool(batch)) with respect to the raw
// feature rows. Rows of one class receive identical gradients.
Matrix cr_grad_features(const CenterBatch& cb, const Matrix& W);
Matrix cr_grad_features(const CenterBatch& cb, const EtfFrame& frame);

struct PrLossResult {
    double loss = 0.0;
    Matrix feature_grad;    // N x d
    Matrix classifier_grad; // d x K
};

PrLossResult pr_loss_and_grad(const FeatureBatch& batch, const Matrix& pr_classifier);

struct TotalLossResult {
    LossBreakdown breakdown;
    Matrix feature_grad;              // grad_PR + lambda * grad_CR, N x d
    Matrix pr_classifier_grad;        // d x K
    Matrix center_classifier_grad;    // lambda * dL_CR/dW; empty when lambda == 0
};

// When lambda == 0 no center gradient is formed, so total and feature_grad
// are the pixel branch bit-for-bit; cr_loss is still reported if a center
// classifier is given (pass an empty matrix to skip it). The center
// classifier is never modified.
TotalLossResult total_loss(const FeatureBatch& batch, const Matrix& pr_classifier,
                           const Matrix& center_classifier, double lambda);
TotalLossResult total_loss(const FeatureBatch& batch, const Matrix& pr_classifier,
                           const EtfFrame& frame, double lambda);

inline constexpr double kDefaultLambda = 0.4;

} // namespace ceco
