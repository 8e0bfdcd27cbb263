#pragma once

// Neural-collapse statistics over last-layer features, plus the imbalance
// diagnostics (imbalance factor, Pearson correlation, frequency splits).
//
// Class indices are 0-based throughout the C++ API. Text formats on disk
// use 1-based labels and are translated by the readers and writers.

#include "ceco/linalg.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ceco {

struct FeatureBatch {
    Matrix features;         // N x d, row i is z_i
    std::vector<int> labels; // length N, each in [0, num_classes)
    int num_classes = 0;

    Index size() const { return features.rows(); }
    Index dim() const { return features.cols(); }

    // Throws DimensionError / DomainError when the invariants are broken.
    void validate() const;
};

struct ClassStats {
    std::vector<Index> counts; // n_k
    Matrix class_means;        // K x d; rows of absent classes are zero
    Vector global_mean;        // z_G
    std::vector<bool> present;

    int num_classes() const { return static_cast<int>(counts.size()); }
    int num_present() const;
};

// Per-class and global means, accumulated in ascending row order.
ClassStats class_stats(const FeatureBatch& batch);

struct NormalizedMeans {
    Matrix rows;               // one unit row per usable class
    std::vector<int> classes;  // class index of each row
    std::vector<int> excluded; // present classes whose mean equals z_G
};

inline constexpr double kDefaultCenteringEps = 1e-12;

// Rows (z_k - z_G) / ||z_k - z_G|| for present classes. Classes whose
// centered norm is below eps are excluded and listed. Throws
// InsufficientClassesError if fewer than two rows remain.
NormalizedMeans centered_normalized_means(const ClassStats& stats,
                                          double eps = kDefaultCenteringEps);

// Population standard deviation of cos(v_k, v_k') over unordered pairs.
// Rows must have unit norm within 1e-6 (NormalizationError otherwise).
double equiangularity_std(const Matrix& unit_rows);

// Mean over unordered pairs of |cos(v_k, v_k') + 1/(K-1)| with K the number
// of rows.
double max_angle_deviation(const Matrix& unit_rows);

// Mean over the rows of `means` of 1 - cos(w_k, zhat_k), pairing row r with
// classifier column means.classes[r].
double self_duality_gap(const Matrix& classifier, const NormalizedMeans& means);

// Normalizes the classifier columns and returns them as rows, for use with
// the two pairwise statistics above.
Matrix normalized_columns_as_rows(const Matrix& W);

// n_max / n_min. Zero counts are rejected with ExcludedClassError.
double imbalance_factor(std::span<const Index> counts);

double pearson(std::span<const double> a, std::span<const double> f);

struct ClassSplit {
    std::vector<int> head;
    std::vector<int> common;
    std::vector<int> tail;
};

// Sorts classes by descending count (ties by ascending index) and cuts them
// into three contiguous groups; the outer groups get floor(K/3) classes and
// the middle group takes the rest.
ClassSplit head_common_tail_split(std::span<const Index> counts);

struct NcReport {
    double equiang_std_centers = 0.0;
    double maxangle_avg_centers = 0.0;
    std::optional<double> equiang_std_classifier;
    std::optional<double> maxangle_avg_classifier;
    std::optional<double> self_duality_gap;
    int n_classes_used = 0;
    std::vector<int> excluded_classes;
};

// Center statistics of `batch`; classifier statistics are filled only when
// a d x K classifier is supplied.
NcReport analyze_features(const FeatureBatch& batch, const Matrix* classifier = nullptr);

// Single JSON object. Class indices are written 1-based.
std::string to_json(const NcReport& report);
NcReport nc_report_from_json(const std::string& text);

// Feature dump: "N d K" header, then N lines "label f_1 ... f_d" with
// 1-based labels.
void write_feature_dump(std::ostream& out, const FeatureBatch& batch);
FeatureBatch read_feature_dump(std::istream& in);

} // namespace ceco
