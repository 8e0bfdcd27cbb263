#include "ceco/nc_metrics.hpp"

#include "ceco/errors.hpp"
#include "ceco/io.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

namespace ceco {

namespace {

constexpr double kUnitTolerance = 1e-6;

void require_unit_rows(const Matrix& rows) {
    if (rows.rows() < 2) {
        throw InsufficientClassesError(
            fmt::format("pairwise statistics need at least 2 rows (got {})", rows.rows()));
    }
    for (Index r = 0; r < rows.rows(); ++r) {
        const double norm = rows.row(r).norm();
        if (!(std::abs(norm - 1.0) <= kUnitTolerance)) {
            throw NormalizationError(fmt::format("row {} has norm {}, expected 1", r, norm));
        }
    }
}

std::vector<double> pair_cosines(const Matrix& unit_rows) {
    const Matrix gram = unit_rows * unit_rows.transpose();
    const Vector norms = gram.diagonal().cwiseSqrt();
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(gram.rows() * (gram.rows() - 1) / 2));
    for (Index i = 0; i < gram.rows(); ++i) {
        for (Index j = i + 1; j < gram.rows(); ++j) {
            out.push_back(gram(i, j) / (norms[i] * norms[j]));
        }
    }
    return out;
}

void append_json_number(std::string& out, const char* key, double value) {
    out += fmt::format("\"{}\":{}", key, format_number(value));
}

} // namespace

void FeatureBatch::validate() const {
    if (features.rows() < 1 || features.cols() < 1) {
        throw DimensionError(
            fmt::format("feature batch needs N >= 1 and d >= 1 (got {} x {})", features.rows(), features.cols()));
    }
    if (static_cast<Index>(labels.size()) != features.rows()) {
        throw DimensionError(
            fmt::format("{} labels for {} feature rows", labels.size(), features.rows()));
    }
    if (num_classes < 1) {
        throw DomainError(fmt::format("class count must be positive (got {})", num_classes));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw DomainError(fmt::format("label {} of row {} is outside [0, {})", labels[i], i, num_classes));
        }
    }
}

int ClassStats::num_present() const {
    return static_cast<int>(std::count(present.begin(), present.end(), true));
}

ClassStats class_stats(const FeatureBatch& batch) {
    batch.validate();
    const int K = batch.num_classes;
    ClassStats stats;
    stats.counts.assign(static_cast<std::size_t>(K), 0);
    stats.class_means = Matrix::Zero(K, batch.dim());
    stats.global_mean = Vector::Zero(batch.dim());
    for (Index i = 0; i < batch.size(); ++i) {
        const int k = batch.labels[static_cast<std::size_t>(i)];
        stats.class_means.row(k) += batch.features.row(i);
        stats.global_mean += batch.features.row(i).transpose();
        ++stats.counts[static_cast<std::size_t>(k)];
    }
    stats.present.assign(static_cast<std::size_t>(K), false);
    for (int k = 0; k < K; ++k) {
        const auto n = stats.counts[static_cast<std::size_t>(k)];
        if (n > 0) {
            stats.class_means.row(k) /= static_cast<double>(n);
            stats.present[static_cast<std::size_t>(k)] = true;
        }
    }
    stats.global_mean /= static_cast<double>(batch.size());
    return stats;
}

NormalizedMeans centered_normalized_means(const ClassStats& stats, double eps) {
    NormalizedMeans out;
    std::vector<RowVector> rows;
    for (int k = 0; k < stats.num_classes(); ++k) {
        if (!stats.present[static_cast<std::size_t>(k)]) {
            continue;
        }
        RowVector centered = stats.class_means.row(k) - stats.global_mean.transpose();
        const double norm = centered.stableNorm();
        if (norm < eps) {
            out.excluded.push_back(k);
            continue;
        }
        rows.push_back(centered / norm);
        out.classes.push_back(k);
    }
    if (rows.size() < 2) {
        throw InsufficientClassesError(fmt::format(
            "need at least 2 classes with a distinct centered mean (have {}, excluded {})",
            rows.size(), out.excluded.size()));
    }
    out.rows.resize(static_cast<Index>(rows.size()), stats.global_mean.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.rows.row(static_cast<Index>(r)) = rows[r];
    }
    return out;
}

double equiangularity_std(const Matrix& unit_rows) {
    require_unit_rows(unit_rows);
    const auto cosines = pair_cosines(unit_rows);
    const double n = static_cast<double>(cosines.size());
    const double mean = std::accumulate(cosines.begin(), cosines.end(), 0.0) / n;
    double var = 0.0;
    for (double c : cosines) {
        var += (c - mean) * (c - mean);
    }
    return std::sqrt(var / n);
}

double max_angle_deviation(const Matrix& unit_rows) {
    require_unit_rows(unit_rows);
    const double shift = 1.0 / static_cast<double>(unit_rows.rows() - 1);
    const auto cosines = pair_cosines(unit_rows);
    double total = 0.0;
    for (double c : cosines) {
        total += std::abs(c + shift);
    }
    return total / static_cast<double>(cosines.size());
}

double self_duality_gap(const Matrix& classifier, const NormalizedMeans& means) {
    if (classifier.rows() != means.rows.cols()) {
        throw DimensionError(fmt::format("classifier has dimension {}, class means have {}",
                                         classifier.rows(), means.rows.cols()));
    }
    double total = 0.0;
    for (std::size_t r = 0; r < means.classes.size(); ++r) {
        const int k = means.classes[r];
        if (k < 0 || k >= classifier.cols()) {
            throw DimensionError(fmt::format("class {} has no classifier column", k));
        }
        const double norm = classifier.col(k).stableNorm();
        if (!(norm > 0.0)) {
            throw DegenerateColumnError(fmt::format("classifier column {} has zero norm", k));
        }
        const double cos = classifier.col(k).dot(means.rows.row(static_cast<Index>(r)).transpose()) / norm;
        total += 1.0 - cos;
    }
    return total / static_cast<double>(means.classes.size());
}

Matrix normalized_columns_as_rows(const Matrix& W) {
    Matrix rows = W.transpose();
    for (Index k = 0; k < rows.rows(); ++k) {
        const double norm = rows.row(k).stableNorm();
        if (!(norm > 0.0)) {
            throw DegenerateColumnError(fmt::format("classifier column {} has zero norm", k));
        }
        rows.row(k) /= norm;
    }
    return rows;
}

double imbalance_factor(std::span<const Index> counts) {
    if (counts.empty()) {
        throw DomainError("imbalance factor of an empty count list");
    }
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] < 1) {
            throw ExcludedClassError(fmt::format(
                "class {} has count {}; filter absent classes before computing the imbalance factor",
                k, counts[k]));
        }
    }
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    return static_cast<double>(*hi) / static_cast<double>(*lo);
}

double pearson(std::span<const double> a, std::span<const double> f) {
    if (a.size() != f.size()) {
        throw DimensionError(fmt::format("pearson of lengths {} and {}", a.size(), f.size()));
    }
    if (a.size() < 2) {
        throw UndefinedCorrelationError("pearson needs at least 2 points");
    }
    const double n = static_cast<double>(a.size());
    const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mean_f = std::accumulate(f.begin(), f.end(), 0.0) / n;
    double cov = 0.0;
    double var_a = 0.0;
    double var_f = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - mean_a;
        const double df = f[i] - mean_f;
        cov += da * df;
        var_a += da * da;
        var_f += df * df;
    }
    if (!(var_a > 0.0) || !(var_f > 0.0)) {
        throw UndefinedCorrelationError("pearson is undefined for a constant series");
    }
    return std::clamp(cov / std::sqrt(var_a * var_f), -1.0, 1.0);
}

ClassSplit head_common_tail_split(std::span<const Index> counts) {
    const int K = static_cast<int>(counts.size());
    if (K < 3) {
        throw SplitError(fmt::format("head/common/tail split needs K >= 3 (got {})", K));
    }
    std::vector<int> order(static_cast<std::size_t>(K));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return counts[static_cast<std::size_t>(x)] > counts[static_cast<std::size_t>(y)];
    });
    const int outer = K / 3;
    ClassSplit split;
    split.head.assign(order.begin(), order.begin() + outer);
    split.common.assign(order.begin() + outer, order.end() - outer);
    split.tail.assign(order.end() - outer, order.end());
    return split;
}

NcReport analyze_features(const FeatureBatch& batch, const Matrix* classifier) {
    const ClassStats stats = class_stats(batch);
    const NormalizedMeans means = centered_normalized_means(stats);
    NcReport report;
    report.equiang_std_centers = equiangularity_std(means.rows);
    report.maxangle_avg_centers = max_angle_deviation(means.rows);
    report.n_classes_used = static_cast<int>(means.classes.size());
    report.excluded_classes = means.excluded;
    if (classifier != nullptr) {
        if (classifier->rows() != batch.dim() || classifier->cols() != batch.num_classes) {
            throw DimensionError(fmt::format("classifier is {} x {}, expected {} x {}", classifier->rows(),
                                             classifier->cols(), batch.dim(), batch.num_classes));
        }
        // Classifier statistics use the same classes as the center statistics.
        Matrix used(batch.dim(), static_cast<Index>(means.classes.size()));
        for (std::size_t r = 0; r < means.classes.size(); ++r) {
            used.col(static_cast<Index>(r)) = classifier->col(means.classes[r]);
        }
        const Matrix rows = normalized_columns_as_rows(used);
        report.equiang_std_classifier = equiangularity_std(rows);
        report.maxangle_avg_classifier = max_angle_deviation(rows);
        report.self_duality_gap = self_duality_gap(*classifier, means);
    }
    return report;
}

std::string to_json(const NcReport& report) {
    std::string out = "{";
    append_json_number(out, "equiang_std_centers", report.equiang_std_centers);
    out += ',';
    append_json_number(out, "maxangle_avg_centers", report.maxangle_avg_centers);
    if (report.equiang_std_classifier) {
        out += ',';
        append_json_number(out, "equiang_std_classifier", *report.equiang_std_classifier);
    }
    if (report.maxangle_avg_classifier) {
        out += ',';
        append_json_number(out, "maxangle_avg_classifier", *report.maxangle_avg_classifier);
    }
    if (report.self_duality_gap) {
        out += ',';
        append_json_number(out, "self_duality_gap", *report.self_duality_gap);
    }
    out += fmt::format(",\"n_classes_used\":{},\"excluded_classes\":[", report.n_classes_used);
    for (std::size_t i = 0; i < report.excluded_classes.size(); ++i) {
        out += fmt::format("{}{}", i > 0 ? "," : "", report.excluded_classes[i] + 1);
    }
    out += "]}";
    return out;
}

NcReport nc_report_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(0, e.what());
    }
    try {
        NcReport report;
        report.equiang_std_centers = j.at("equiang_std_centers").get<double>();
        report.maxangle_avg_centers = j.at("maxangle_avg_centers").get<double>();
        if (j.contains("equiang_std_classifier")) {
            report.equiang_std_classifier = j.at("equiang_std_classifier").get<double>();
        }
        if (j.contains("maxangle_avg_classifier")) {
            report.maxangle_avg_classifier = j.at("maxangle_avg_classifier").get<double>();
        }
        if (j.contains("self_duality_gap")) {
            report.self_duality_gap = j.at("self_duality_gap").get<double>();
        }
        report.n_classes_used = j.at("n_classes_used").get<int>();
        for (int k : j.at("excluded_classes").get<std::vector<int>>()) {
            report.excluded_classes.push_back(k - 1);
        }
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, e.what());
    }
}

void write_feature_dump(std::ostream& out, const FeatureBatch& batch) {
    batch.validate();
    out << batch.size() << ' ' << batch.dim() << ' ' << batch.num_classes << '\n';
    for (Index i = 0; i < batch.size(); ++i) {
        out << batch.labels[static_cast<std::size_t>(i)] + 1;
        for (Index c = 0; c < batch.dim(); ++c) {
            out << ' ' << format_number(batch.features(i, c));
        }
        out << '\n';
    }
}

FeatureBatch read_feature_dump(std::istream& in) {
    LineReader reader(in);
    const auto header = reader.tokens("header 'N d K'");
    if (header.size() != 3) {
        throw ParseError(reader.line(), "header must be 'N d K'");
    }
    const long long N = reader.to_integer(header[0]);
    const long long d = reader.to_integer(header[1]);
    const long long K = reader.to_integer(header[2]);
    if (N < 1 || d < 1 || K < 1) {
        throw ParseError(reader.line(), "N, d and K must be positive");
    }
    FeatureBatch batch;
    batch.features.resize(N, d);
    batch.labels.resize(static_cast<std::size_t>(N));
    batch.num_classes = static_cast<int>(K);
    for (long long i = 0; i < N; ++i) {
        const auto row = reader.tokens(fmt::format("feature row {} of {}", i + 1, N));
        if (static_cast<long long>(row.size()) != d + 1) {
            throw ParseError(reader.line(),
                             fmt::format("expected a label and {} features, found {} fields", d, row.size()));
        }
        const long long label = reader.to_integer(row[0]);
        if (label < 1 || label > K) {
            throw ParseError(reader.line(), fmt::format("label {} outside 1..{}", label, K));
        }
        batch.labels[static_cast<std::size_t>(i)] = static_cast<int>(label - 1);
        for (long long c = 0; c < d; ++c) {
            batch.features(i, c) = reader.to_double(row[static_cast<std::size_t>(c + 1)]);
        }
    }
    if (!reader.at_end()) {
        throw ParseError(reader.line() + 1, "trailing content after feature rows");
    }
    return batch;
}

} // namespace ceco
