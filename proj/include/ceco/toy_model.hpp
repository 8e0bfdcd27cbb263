#pragma once

// Synthetic imbalanced segmentation scenes and a two-layer perceptron with
// hand-written backpropagation that maps raw pixel inputs to last-layer
// features.

#include "ceco/linalg.hpp"
#include "ceco/nc_metrics.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace ceco {

struct SceneConfig {
    int height = 32;
    int width = 32;
    int num_classes = 10;
    double beta = 100.0;       // target n_max / n_min
    int input_dim = 8;         // s
    int blob_count = 24;       // region seeds shared out across classes
    double noise_sigma = 0.75;
    int smooth_radius = 0;     // box filter half-width; 0 disables smoothing
    double prototype_scale = 1.0;
    std::uint64_t seed = 0;
    // Class prototypes (the per-class input means) are drawn from this seed
    // so that scenes with different `seed` share one labelling of inputs.
    std::uint64_t prototype_seed = 0;

    Index num_pixels() const { return static_cast<Index>(height) * width; }

    void validate() const;
};

struct Scene {
    Matrix inputs;                 // N x s, row-major pixel order
    std::vector<int> labels;       // length N
    std::vector<Index> pixel_counts;

    FeatureBatch as_batch(int num_classes) const;
};

// Geometric profile from n_max down to n_max / beta summing to the pixel
// count. Non-increasing in class index. Throws GenerationError when a class
// would receive no pixel.
std::vector<Index> target_class_counts(const SceneConfig& cfg);

// K x s class prototypes for a configuration.
Matrix class_prototypes(const SceneConfig& cfg);

Scene gen_scene(const SceneConfig& cfg);

// Number of scenes in which each class appears at least once.
std::vector<Index> scene_center_counts(std::span<const Scene> scenes, int num_classes);

// Pixel counts summed over scenes.
std::vector<Index> total_pixel_counts(std::span<const Scene> scenes, int num_classes);

// Scene file: the feature-dump format with raw inputs as features.
void write_scene(std::ostream& out, const Scene& scene, int num_classes);

// Sidecar "key = value" block describing the configuration.
void write_scene_config(std::ostream& out, const SceneConfig& cfg);
SceneConfig read_scene_config(std::istream& in);

// ---------------------------------------------------------------------------
// Two-layer perceptron: z = W2 elu(W1 x + b1) + b2, logits = z^T W_pr.
// ELU is the identity on nonnegative inputs and continuously differentiable.

struct MlpParams {
    Matrix w1;   // h x s
    Vector b1;   // h
    Matrix w2;   // d x h
    Vector b2;   // d
    Matrix w_pr; // d x K
    // Bumped on every update so that caches from an older forward pass are
    // detected by backward().
    std::uint64_t version = 0;

    Index input_dim() const { return w1.cols(); }
    Index hidden_dim() const { return w1.rows(); }
    Index feature_dim() const { return w2.rows(); }
    Index num_classes() const { return w_pr.cols(); }

    void validate() const;

    static MlpParams init(Index s, Index h, Index d, Index K, std::uint64_t seed);
    static MlpParams zeros(Index s, Index h, Index d, Index K);
};

struct MlpGrads {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
    Matrix w_pr;

    static MlpGrads zeros_like(const MlpParams& params);
    bool all_finite() const;
};

struct ForwardCache {
    Matrix inputs;      // N x s
    Matrix pre_hidden;  // N x h
    Matrix hidden;      // N x h, elu(pre_hidden)
    std::uint64_t version = 0;
};

struct ForwardResult {
    Matrix features; // N x d
    Matrix logits;   // N x K
    ForwardCache cache;
};

double elu(double x);
double elu_derivative(double x);

ForwardResult forward(const MlpParams& params, const Matrix& inputs);

// Chain rule from dL/dZ (N x d) and dL/dW_pr (d x K) to every parameter.
// Throws ConsistencyError if the cache does not belong to `params`.
MlpGrads backward(const MlpParams& params, const ForwardCache& cache, const Matrix& feature_grads,
                  const Matrix& classifier_grads);

// p <- p - lr * (g + weight_decay * p). When `update_classifier` is false
// the pixel classifier is left untouched (fixed-classifier variants).
void sgd_step(MlpParams& params, const MlpGrads& grads, double lr, double weight_decay,
              bool update_classifier = true);

// Same rule for a free-standing learnable matrix.
void sgd_update(Matrix& param, const Matrix& grad, double lr, double weight_decay);

// lr * (1 - iter / max_iter)^power.
double poly_lr(double base_lr, long iteration, long max_iterations, double power = 0.9);

} // namespace ceco
