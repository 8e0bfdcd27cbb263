#include "ceco/grad_check.hpp"

#include "ceco/ceco_loss.hpp"
#include "ceco/errors.hpp"
#include "ceco/rng.hpp"
#include "ceco/toy_model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace ceco {

namespace {

Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Index c = 0; c < cols; ++c) {
        for (Index r = 0; r < rows; ++r) {
            m(r, c) = scale * rng.normal();
        }
    }
    return m;
}

// Labels covering the first `present` classes, each at least once.
std::vector<int> random_labels(Rng& rng, Index N, int present) {
    std::vector<int> labels(static_cast<std::size_t>(N));
    for (Index i = 0; i < N; ++i) {
        labels[static_cast<std::size_t>(i)] =
            i < present ? static_cast<int>(i) : static_cast<int>(rng.index(static_cast<std::size_t>(present)));
    }
    return labels;
}

Matrix numeric_gradient(Matrix x, const std::function<double(const Matrix&)>& f) {
    Matrix g(x.rows(), x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
        for (Index r = 0; r < x.rows(); ++r) {
            const double saved = x(r, c);
            x(r, c) = saved + kGradCheckStep;
            const double up = f(x);
            x(r, c) = saved - kGradCheckStep;
            const double down = f(x);
            x(r, c) = saved;
            g(r, c) = (up - down) / (2.0 * kGradCheckStep);
        }
    }
    return g;
}

double relative_error(const Matrix& analytic, const Matrix& numeric) {
    return max_relative_error(analytic.data(), numeric.data(), static_cast<std::size_t>(analytic.size()));
}

struct Instance {
    FeatureBatch batch;
    Matrix classifier;
};

Instance random_instance(std::uint64_t seed) {
    Rng rng(seed);
    const int K = 3 + static_cast<int>(rng.index(4));
    const Index d = 2 + static_cast<Index>(rng.index(6));
    const Index N = K + static_cast<Index>(rng.index(12));
    const int present = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(K - 1)));
    Instance inst;
    inst.batch.features = random_matrix(rng, N, d);
    inst.batch.labels = random_labels(rng, N, present);
    inst.batch.num_classes = K;
    inst.classifier = random_matrix(rng, d, K);
    return inst;
}

template <typename Check>
GradSuiteResult run_suite(const std::string& name, std::uint64_t seed, int trials, Check check) {
    GradSuiteResult out;
    out.name = name;
    out.trials = trials;
    out.worst_seed = seed;
    for (int t = 0; t < trials; ++t) {
        const std::uint64_t s = seed + static_cast<std::uint64_t>(t);
        const double err = check(s);
        if (!(err <= out.worst_relative_error)) {
            out.worst_relative_error = err;
            out.worst_seed = s;
        }
    }
    out.passed = out.worst_relative_error <= kGradCheckTolerance;
    return out;
}

double end_to_end_error(std::uint64_t seed, double lambda) {
    Rng rng(seed);
    SceneConfig sc;
    sc.height = 6;
    sc.width = 6;
    sc.num_classes = 4;
    sc.beta = 4.0;
    sc.input_dim = 3;
    sc.blob_count = 5;
    sc.seed = rng.next();
    sc.prototype_seed = rng.next();
    const Scene scene = gen_scene(sc);
    const Index h = 5;
    const Index d = 4;
    const int K = sc.num_classes;
    MlpParams params = MlpParams::init(sc.input_dim, h, d, K, rng.next());
    params.b1 = random_matrix(rng, h, 1, 0.3);
    params.b2 = random_matrix(rng, d, 1, 0.3);
    const EtfFrame frame = make_etf(d, K, 1.0, rng.next());

    auto loss_of = [&](const MlpParams& p) {
        const ForwardResult fwd = forward(p, scene.inputs);
        return total_loss(FeatureBatch{fwd.features, scene.labels, K}, p.w_pr, frame, lambda).breakdown.total;
    };

    const ForwardResult fwd = forward(params, scene.inputs);
    const TotalLossResult tl = total_loss(FeatureBatch{fwd.features, scene.labels, K}, params.w_pr, frame, lambda);
    const MlpGrads grads = backward(params, fwd.cache, tl.feature_grad, tl.pr_classifier_grad);

    double worst = 0.0;
    auto check_block = [&](Matrix MlpParams::*block, const Matrix& analytic) {
        const Matrix numeric = numeric_gradient(params.*block, [&](const Matrix& x) {
            MlpParams p = params;
            p.*block = x;
            return loss_of(p);
        });
        worst = std::max(worst, relative_error(analytic, numeric));
    };
    auto check_bias = [&](Vector MlpParams::*block, const Vector& analytic) {
        const Matrix numeric = numeric_gradient(params.*block, [&](const Matrix& x) {
            MlpParams p = params;
            p.*block = x.col(0);
            return loss_of(p);
        });
        worst = std::max(worst, relative_error(analytic, numeric));
    };
    check_block(&MlpParams::w1, grads.w1);
    check_bias(&MlpParams::b1, grads.b1);
    check_block(&MlpParams::w2, grads.w2);
    check_bias(&MlpParams::b2, grads.b2);
    check_block(&MlpParams::w_pr, grads.w_pr);
    return worst;
}

} // namespace

bool GradCheckSummary::passed() const {
    return std::all_of(suites.begin(), suites.end(), [](const GradSuiteResult& s) { return s.passed; });
}

double max_relative_error(const double* analytic, const double* numeric, std::size_t count) {
    double diff = 0.0;
    double scale = 1e-8;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(analytic[i]) || !std::isfinite(numeric[i])) {
            return std::numeric_limits<double>::infinity();
        }
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return diff / scale;
}

GradCheckSummary run_grad_checks(std::uint64_t seed, int trials, GradFault fault) {
    if (trials < 1) {
        throw DomainError(fmt::format("need at least one trial (got {})", trials));
    }
    GradCheckSummary summary;

    summary.suites.push_back(run_suite("center_classifier", seed, trials, [](std::uint64_t s) {
        const Instance inst = random_instance(s);
        const CenterBatch cb = center_pool(inst.batch);
        const Matrix analytic = cr_grad_classifier(cb, inst.classifier);
        const Matrix numeric = numeric_gradient(inst.classifier, [&](const Matrix& W) { return cr_loss(cb, W); });
        return relative_error(analytic, numeric);
    }));

    summary.suites.push_back(run_suite("center_features", seed, trials, [fault](std::uint64_t s) {
        Instance inst = random_instance(s);
        inst.classifier = make_etf(inst.batch.dim() + inst.batch.num_classes, inst.batch.num_classes, 1.0, s).matrix;
        // Lift features into the frame's dimension.
        Rng rng(s ^ 0x5eedULL);
        inst.batch.features = random_matrix(rng, inst.batch.size(), inst.classifier.rows());
        Matrix analytic = cr_grad_features(center_pool(inst.batch), inst.classifier);
        if (fault == GradFault::flip_center_feature_sign) {
            analytic = -analytic;
        }
        const Matrix numeric = numeric_gradient(inst.batch.features, [&](const Matrix& Z) {
            return cr_loss(center_pool(FeatureBatch{Z, inst.batch.labels, inst.batch.num_classes}), inst.classifier);
        });
        return relative_error(analytic, numeric);
    }));

    summary.suites.push_back(run_suite("pixel_ce", seed, trials, [](std::uint64_t s) {
        const Instance inst = random_instance(s);
        const PrLossResult pr = pr_loss_and_grad(inst.batch, inst.classifier);
        const Matrix num_z = numeric_gradient(inst.batch.features, [&](const Matrix& Z) {
            return pr_loss_and_grad(FeatureBatch{Z, inst.batch.labels, inst.batch.num_classes}, inst.classifier).loss;
        });
        const Matrix num_w = numeric_gradient(
            inst.classifier, [&](const Matrix& W) { return pr_loss_and_grad(inst.batch, W).loss; });
        return std::max(relative_error(pr.feature_grad, num_z), relative_error(pr.classifier_grad, num_w));
    }));

    summary.suites.push_back(run_suite("end_to_end", seed, trials, [](std::uint64_t s) {
        double worst = 0.0;
        for (double lambda : {0.0, 0.4, 1.0}) {
            worst = std::max(worst, end_to_end_error(s, lambda));
        }
        return worst;
    }));
    return summary;
}

} // namespace ceco
