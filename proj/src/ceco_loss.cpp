#include "ceco/ceco_loss.hpp"

#include "ceco/errors.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ceco {

namespace {

void require_center_classifier(const CenterBatch& cb, const Matrix& W) {
    if (W.rows() != cb.dim()) {
        throw DimensionError(
            fmt::format("center classifier has dimension {}, centers have {}", W.rows(), cb.dim()));
    }
    for (int k : cb.center_labels) {
        if (k < 0 || k >= W.cols()) {
            throw DimensionError(fmt::format("center class {} has no column among {}", k, W.cols()));
        }
    }
}

// Row r holds softmax(W^T zbar_r).
Matrix center_probabilities(const CenterBatch& cb, const Matrix& W) {
    Matrix probs(cb.num_centers(), W.cols());
    for (Index r = 0; r < cb.num_centers(); ++r) {
        probs.row(r) = softmax_probs(cb.centers.row(r).transpose(), W).transpose();
    }
    return probs;
}

} // namespace

CenterBatch center_pool(const FeatureBatch& batch) {
    const ClassStats stats = class_stats(batch);
    CenterBatch cb;
    std::vector<int> slot(static_cast<std::size_t>(batch.num_classes), -1);
    for (int k = 0; k < batch.num_classes; ++k) {
        if (stats.present[static_cast<std::size_t>(k)]) {
            slot[static_cast<std::size_t>(k)] = static_cast<int>(cb.center_labels.size());
            cb.center_labels.push_back(k);
            cb.counts.push_back(stats.counts[static_cast<std::size_t>(k)]);
        }
    }
    cb.centers.resize(static_cast<Index>(cb.center_labels.size()), batch.dim());
    for (std::size_t r = 0; r < cb.center_labels.size(); ++r) {
        cb.centers.row(static_cast<Index>(r)) = stats.class_means.row(cb.center_labels[r]);
    }
    cb.source_map.resize(batch.labels.size());
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        cb.source_map[i] = slot[static_cast<std::size_t>(batch.labels[i])];
    }
    return cb;
}

Vector softmax(const Vector& logits) {
    if (!logits.allFinite()) {
        throw NumericError("softmax of non-finite logits");
    }
    const double top = logits.maxCoeff();
    Vector p = (logits.array() - top).exp().matrix();
    p /= p.sum();
    return p;
}

Vector softmax_probs(const Vector& z, const Matrix& W) {
    if (z.size() != W.rows()) {
        throw DimensionError(fmt::format("feature of dimension {} against a {} x {} classifier", z.size(),
                                         W.rows(), W.cols()));
    }
    return softmax(W.transpose() * z);
}

double cr_loss(const CenterBatch& cb, const Matrix& W) {
    require_center_classifier(cb, W);
    double loss = 0.0;
    for (Index r = 0; r < cb.num_centers(); ++r) {
        const Vector logits = W.transpose() * cb.centers.row(r).transpose();
        if (!logits.allFinite()) {
            throw NumericError("non-finite center logits");
        }
        const double top = logits.maxCoeff();
        const double log_norm = top + std::log((logits.array() - top).exp().sum());
        loss += log_norm - logits[cb.center_labels[static_cast<std::size_t>(r)]];
    }
    return loss;
}

double cr_loss(const CenterBatch& cb, const EtfFrame& frame) {
    return cr_loss(cb, frame.matrix);
}

Matrix cr_grad_classifier(const CenterBatch& cb, const Matrix& W) {
    require_center_classifier(cb, W);
    const Matrix probs = center_probabilities(cb, W);
    // Column k gathers p_k(zbar_r) zbar_r over every center r, minus zbar_k
    // for its own center.
    Matrix grad = cb.centers.transpose() * probs;
    for (Index r = 0; r < cb.num_centers(); ++r) {
        grad.col(cb.center_labels[static_cast<std::size_t>(r)]) -= cb.centers.row(r).transpose();
    }
    return grad;
}

Matrix cr_grad_features(const CenterBatch& cb, const Matrix& W) {
    require_center_classifier(cb, W);
    const Matrix probs = center_probabilities(cb, W);
    // dL/dzbar_k = sum_k' p_k'(zbar_k) (w_k' - w_k) = W p - w_k.
    Matrix center_grad(cb.num_centers(), cb.dim());
    for (Index r = 0; r < cb.num_centers(); ++r) {
        const int k = cb.center_labels[static_cast<std::size_t>(r)];
        Vector g = W * probs.row(r).transpose() - W.col(k);
        center_grad.row(r) = g.transpose() / static_cast<double>(cb.counts[static_cast<std::size_t>(r)]);
    }
    Matrix grad(cb.num_rows(), cb.dim());
    for (Index i = 0; i < cb.num_rows(); ++i) {
        grad.row(i) = center_grad.row(cb.source_map[static_cast<std::size_t>(i)]);
    }
    return grad;
}

Matrix cr_grad_features(const CenterBatch& cb, const EtfFrame& frame) {
    return cr_grad_features(cb, frame.matrix);
}

PrLossResult pr_loss_and_grad(const FeatureBatch& batch, const Matrix& pr_classifier) {
    batch.validate();
    if (pr_classifier.rows() != batch.dim() || pr_classifier.cols() != batch.num_classes) {
        throw DimensionError(fmt::format("pixel classifier is {} x {}, expected {} x {}", pr_classifier.rows(),
                                         pr_classifier.cols(), batch.dim(), batch.num_classes));
    }
    const Index N = batch.size();
    const double inv_n = 1.0 / static_cast<double>(N);
    Matrix logits = batch.features * pr_classifier; // N x K
    if (!logits.allFinite()) {
        throw NumericError("non-finite pixel logits");
    }
    PrLossResult out;
    Matrix dlogits(N, pr_classifier.cols());
    for (Index i = 0; i < N; ++i) {
        const int y = batch.labels[static_cast<std::size_t>(i)];
        const double top = logits.row(i).maxCoeff();
        RowVector e = (logits.row(i).array() - top).exp().matrix();
        const double sum = e.sum();
        out.loss += top + std::log(sum) - logits(i, y);
        dlogits.row(i) = e / sum;
        dlogits(i, y) -= 1.0;
    }
    out.loss *= inv_n;
    dlogits *= inv_n;
    out.feature_grad = dlogits * pr_classifier.transpose();
    out.classifier_grad = batch.features.transpose() * dlogits;
    return out;
}

TotalLossResult total_loss(const FeatureBatch& batch, const Matrix& pr_classifier,
                           const Matrix& center_classifier, double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw DomainError(fmt::format("loss weight lambda must be nonnegative (got {})", lambda));
    }
    PrLossResult pr = pr_loss_and_grad(batch, pr_classifier);
    TotalLossResult out;
    out.breakdown.lambda = lambda;
    out.breakdown.pr_loss = pr.loss;
    out.feature_grad = std::move(pr.feature_grad);
    out.pr_classifier_grad = std::move(pr.classifier_grad);
    if (lambda == 0.0) {
        // Reported for monitoring only; nothing flows back from it.
        if (center_classifier.size() > 0) {
            out.breakdown.cr_loss = cr_loss(center_pool(batch), center_classifier);
        }
        out.breakdown.total = out.breakdown.pr_loss;
        return out;
    }
    const CenterBatch cb = center_pool(batch);
    out.breakdown.cr_loss = cr_loss(cb, center_classifier);
    out.breakdown.total = out.breakdown.pr_loss + lambda * out.breakdown.cr_loss;
    out.feature_grad += lambda * cr_grad_features(cb, center_classifier);
    out.center_classifier_grad = lambda * cr_grad_classifier(cb, center_classifier);
    return out;
}

TotalLossResult total_loss(const FeatureBatch& batch, const Matrix& pr_classifier, const EtfFrame& frame,
                           double lambda) {
    return total_loss(batch, pr_classifier, frame.matrix, lambda);
}

} // namespace ceco
