#include "ceco/toy_model.hpp"

#include "ceco/errors.hpp"
#include "ceco/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace ceco {

namespace {

void fill_normal(Matrix& m, Rng& rng, double scale) {
    for (Index c = 0; c < m.cols(); ++c) {
        for (Index r = 0; r < m.rows(); ++r) {
            m(r, c) = scale * rng.normal();
        }
    }
}

void require_shape(const char* what, const Matrix& m, Index rows, Index cols) {
    if (m.rows() != rows || m.cols() != cols) {
        throw DimensionError(fmt::format("{} is {} x {}, expected {} x {}", what, m.rows(), m.cols(), rows, cols));
    }
}

void require_finite(const char* what, const Matrix& m) {
    if (!m.allFinite()) {
        throw DivergenceError(fmt::format("non-finite values in {}", what));
    }
}

} // namespace

void MlpParams::validate() const {
    const Index s = w1.cols();
    const Index h = w1.rows();
    const Index d = w2.rows();
    if (s < 1 || h < 1 || d < 1 || w_pr.cols() < 1) {
        throw DimensionError("perceptron sizes must be positive");
    }
    if (b1.size() != h || w2.cols() != h || b2.size() != d || w_pr.rows() != d) {
        throw DimensionError(fmt::format("inconsistent perceptron shapes: w1 {}x{}, b1 {}, w2 {}x{}, b2 {}, w_pr {}x{}",
                                         w1.rows(), w1.cols(), b1.size(), w2.rows(), w2.cols(), b2.size(),
                                         w_pr.rows(), w_pr.cols()));
    }
    if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite() || !w_pr.allFinite()) {
        throw NumericError("perceptron parameters contain non-finite values");
    }
}

MlpParams MlpParams::zeros(Index s, Index h, Index d, Index K) {
    return MlpParams{Matrix::Zero(h, s), Vector::Zero(h), Matrix::Zero(d, h), Vector::Zero(d), Matrix::Zero(d, K), 0};
}

MlpParams MlpParams::init(Index s, Index h, Index d, Index K, std::uint64_t seed) {
    MlpParams p = zeros(s, h, d, K);
    Rng rng(seed);
    // Unit-variance pre-activations for unit-variance inputs.
    fill_normal(p.w1, rng, 1.0 / std::sqrt(static_cast<double>(s)));
    fill_normal(p.w2, rng, 1.0 / std::sqrt(static_cast<double>(h)));
    fill_normal(p.w_pr, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    return p;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
    return MlpGrads{Matrix::Zero(params.w1.rows(), params.w1.cols()), Vector::Zero(params.b1.size()),
                    Matrix::Zero(params.w2.rows(), params.w2.cols()), Vector::Zero(params.b2.size()),
                    Matrix::Zero(params.w_pr.rows(), params.w_pr.cols())};
}

bool MlpGrads::all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() && w_pr.allFinite();
}

double elu(double x) {
    return x >= 0.0 ? x : std::expm1(x);
}

double elu_derivative(double x) {
    return x >= 0.0 ? 1.0 : std::exp(x);
}

ForwardResult forward(const MlpParams& params, const Matrix& inputs) {
    params.validate();
    if (inputs.cols() != params.input_dim()) {
        throw DimensionError(fmt::format("inputs have {} columns, perceptron expects {}", inputs.cols(),
                                         params.input_dim()));
    }
    ForwardResult out;
    out.cache.inputs = inputs;
    out.cache.pre_hidden = (inputs * params.w1.transpose()).rowwise() + params.b1.transpose();
    out.cache.hidden = out.cache.pre_hidden.unaryExpr([](double x) { return elu(x); });
    out.cache.version = params.version;
    out.features = (out.cache.hidden * params.w2.transpose()).rowwise() + params.b2.transpose();
    out.logits = out.features * params.w_pr;
    return out;
}

MlpGrads backward(const MlpParams& params, const ForwardCache& cache, const Matrix& feature_grads,
                  const Matrix& classifier_grads) {
    if (cache.version != params.version) {
        throw ConsistencyError(fmt::format("forward cache is from parameter version {}, parameters are at {}",
                                           cache.version, params.version));
    }
    const Index N = cache.inputs.rows();
    if (cache.inputs.cols() != params.input_dim() || cache.hidden.rows() != N ||
        cache.hidden.cols() != params.hidden_dim()) {
        throw ConsistencyError("forward cache shapes do not match the parameters");
    }
    require_shape("feature gradient", feature_grads, N, params.feature_dim());
    require_shape("classifier gradient", classifier_grads, params.feature_dim(), params.num_classes());

    MlpGrads g;
    g.w_pr = classifier_grads;
    g.w2 = feature_grads.transpose() * cache.hidden;
    g.b2 = feature_grads.colwise().sum().transpose();
    const Matrix dhidden = feature_grads * params.w2;
    const Matrix dpre =
        dhidden.cwiseProduct(cache.pre_hidden.unaryExpr([](double x) { return elu_derivative(x); }));
    g.w1 = dpre.transpose() * cache.inputs;
    g.b1 = dpre.colwise().sum().transpose();
    return g;
}

void sgd_update(Matrix& param, const Matrix& grad, double lr, double weight_decay) {
    require_shape("gradient", grad, param.rows(), param.cols());
    require_finite("gradient", grad);
    param -= lr * (grad + weight_decay * param);
}

void sgd_step(MlpParams& params, const MlpGrads& grads, double lr, double weight_decay, bool update_classifier) {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw DomainError(fmt::format("learning rate must be positive (got {})", lr));
    }
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
        throw DomainError(fmt::format("weight decay must be nonnegative (got {})", weight_decay));
    }
    if (!grads.all_finite()) {
        throw DivergenceError("non-finite parameter gradient");
    }
    require_shape("w1 gradient", grads.w1, params.w1.rows(), params.w1.cols());
    require_shape("w2 gradient", grads.w2, params.w2.rows(), params.w2.cols());
    require_shape("w_pr gradient", grads.w_pr, params.w_pr.rows(), params.w_pr.cols());
    if (grads.b1.size() != params.b1.size() || grads.b2.size() != params.b2.size()) {
        throw DimensionError("bias gradient sizes do not match the parameters");
    }
    params.w1 -= lr * (grads.w1 + weight_decay * params.w1);
    params.b1 -= lr * (grads.b1 + weight_decay * params.b1);
    params.w2 -= lr * (grads.w2 + weight_decay * params.w2);
    params.b2 -= lr * (grads.b2 + weight_decay * params.b2);
    if (update_classifier) {
        params.w_pr -= lr * (grads.w_pr + weight_decay * params.w_pr);
    }
    ++params.version;
}

double poly_lr(double base_lr, long iteration, long max_iterations, double power) {
    if (max_iterations <= 0) {
        return base_lr;
    }
    const double frac = 1.0 - static_cast<double>(iteration) / static_cast<double>(max_iterations);
    return base_lr * std::pow(std::max(frac, 0.0), power);
}

} // namespace ceco
