#include "ceco/harness.hpp"

#include "ceco/ceco_loss.hpp"
#include "ceco/errors.hpp"
#include "ceco/io.hpp"
#include "ceco/nc_metrics.hpp"
#include "ceco/rng.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

namespace ceco {

namespace {

// Seed layout: scene i of the training pool uses seed * 2^32 + i, of the
// evaluation pool seed * 2^32 + 2^31 + i. Model and frame initializations
// use separately mixed streams so that switching one component on or off
// never shifts another's random numbers.
constexpr std::uint64_t kEvalOffset = std::uint64_t{1} << 31;
constexpr std::uint64_t kMlpStream = 11;
constexpr std::uint64_t kCenterFrameStream = 12;
constexpr std::uint64_t kCenterLearnedStream = 13;
constexpr std::uint64_t kPixelFrameStream = 14;

SceneConfig scene_for(const TrainConfig& cfg, std::uint64_t offset) {
    SceneConfig sc = cfg.scene;
    sc.prototype_seed = cfg.seed;
    sc.seed = (cfg.seed << 32) + offset;
    return sc;
}

struct StackedScenes {
    Matrix inputs;
    std::vector<int> labels;
};

StackedScenes stack(const std::vector<const Scene*>& scenes) {
    Index rows = 0;
    for (const Scene* s : scenes) {
        rows += s->inputs.rows();
    }
    StackedScenes out;
    out.inputs.resize(rows, scenes.front()->inputs.cols());
    out.labels.reserve(static_cast<std::size_t>(rows));
    Index at = 0;
    for (const Scene* s : scenes) {
        out.inputs.middleRows(at, s->inputs.rows()) = s->inputs;
        out.labels.insert(out.labels.end(), s->labels.begin(), s->labels.end());
        at += s->inputs.rows();
    }
    return out;
}

double group_mean(const std::vector<double>& per_class, const std::vector<int>& group) {
    double total = 0.0;
    for (int k : group) {
        total += per_class[static_cast<std::size_t>(k)];
    }
    return total / static_cast<double>(group.size());
}

struct Evaluator {
    StackedScenes data;
    ClassSplit split;
    int num_classes = 0;

    EvalRecord evaluate(const MlpParams& params, const LossBreakdown& losses, long iteration) const {
        const ForwardResult fwd = forward(params, data.inputs);
        if (!fwd.features.allFinite() || !fwd.logits.allFinite()) {
            throw DivergenceError(fmt::format("non-finite evaluation features at iteration {}", iteration));
        }
        EvalRecord rec;
        rec.iteration = iteration;
        rec.pr_loss = losses.pr_loss;
        rec.cr_loss = losses.cr_loss;
        rec.total = losses.total;

        const auto K = static_cast<std::size_t>(num_classes);
        std::vector<Index> hits(K, 0);
        std::vector<Index> seen(K, 0);
        Index correct = 0;
        for (Index i = 0; i < fwd.logits.rows(); ++i) {
            Index best = 0;
            fwd.logits.row(i).maxCoeff(&best);
            const auto y = static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)]);
            ++seen[y];
            if (static_cast<std::size_t>(best) == y) {
                ++hits[y];
                ++correct;
            }
        }
        rec.per_class_accuracy.resize(K);
        for (std::size_t k = 0; k < K; ++k) {
            if (seen[k] == 0) {
                throw ConsistencyError(fmt::format("class {} is missing from the evaluation scenes", k));
            }
            rec.per_class_accuracy[k] = static_cast<double>(hits[k]) / static_cast<double>(seen[k]);
        }
        rec.accuracy = std::accumulate(rec.per_class_accuracy.begin(), rec.per_class_accuracy.end(), 0.0) /
                       static_cast<double>(K);
        rec.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(fwd.logits.rows());
        rec.head_accuracy = group_mean(rec.per_class_accuracy, split.head);
        rec.common_accuracy = group_mean(rec.per_class_accuracy, split.common);
        rec.tail_accuracy = group_mean(rec.per_class_accuracy, split.tail);

        const NcReport nc = analyze_features(FeatureBatch{fwd.features, data.labels, num_classes}, &params.w_pr);
        rec.equiang_std_centers = nc.equiang_std_centers;
        rec.maxangle_avg_centers = nc.maxangle_avg_centers;
        rec.equiang_std_classifier = nc.equiang_std_classifier.value();
        rec.maxangle_avg_classifier = nc.maxangle_avg_classifier.value();
        rec.self_duality_gap = nc.self_duality_gap.value();
        return rec;
    }
};

bool params_finite(const MlpParams& p) {
    return p.w1.allFinite() && p.b1.allFinite() && p.w2.allFinite() && p.b2.allFinite() && p.w_pr.allFinite();
}

bool finite_record(const EvalRecord& r) {
    const double fields[] = {r.pr_loss, r.cr_loss, r.total, r.equiang_std_centers, r.maxangle_avg_centers,
                             r.equiang_std_classifier, r.maxangle_avg_classifier, r.self_duality_gap,
                             r.accuracy, r.pixel_accuracy, r.head_accuracy, r.common_accuracy, r.tail_accuracy};
    return std::all_of(std::begin(fields), std::end(fields), [](double v) { return std::isfinite(v); }) &&
           std::all_of(r.per_class_accuracy.begin(), r.per_class_accuracy.end(),
                       [](double v) { return std::isfinite(v); });
}

} // namespace

std::string_view to_string(PrClassifierMode mode) {
    return mode == PrClassifierMode::learned ? "learned" : "fixed";
}

std::string_view to_string(CenterClassifierMode mode) {
    switch (mode) {
    case CenterClassifierMode::fixed_etf:
        return "fixed";
    case CenterClassifierMode::learned:
        return "learned";
    case CenterClassifierMode::off:
        return "off";
    }
    return "off";
}

PrClassifierMode parse_pr_mode(std::string_view text) {
    if (text == "learned") {
        return PrClassifierMode::learned;
    }
    if (text == "fixed" || text == "fixed_etf") {
        return PrClassifierMode::fixed_etf;
    }
    throw DomainError(fmt::format("unknown pixel classifier mode '{}' (learned | fixed)", text));
}

CenterClassifierMode parse_cc_mode(std::string_view text) {
    if (text == "fixed" || text == "fixed_etf") {
        return CenterClassifierMode::fixed_etf;
    }
    if (text == "learned") {
        return CenterClassifierMode::learned;
    }
    if (text == "off" || text == "-") {
        return CenterClassifierMode::off;
    }
    throw DomainError(fmt::format("unknown center classifier mode '{}' (fixed | learned | off)", text));
}

void TrainConfig::validate() const {
    scene.validate();
    if (hidden_dim < 1 || feature_dim < 1) {
        throw DomainError(fmt::format("model sizes must be positive (h = {}, d = {})", hidden_dim, feature_dim));
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw DomainError(fmt::format("lambda must be nonnegative (got {})", lambda));
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw DomainError(fmt::format("alpha must be positive (got {})", alpha));
    }
    if (cc_mode == CenterClassifierMode::off && lambda != 0.0) {
        throw DomainError(fmt::format("center classifier is off but lambda = {}; use lambda = 0", lambda));
    }
    const bool wants_etf = pr_mode == PrClassifierMode::fixed_etf || cc_mode == CenterClassifierMode::fixed_etf;
    if (wants_etf && feature_dim < num_classes()) {
        throw DimensionError(fmt::format("a fixed ETF classifier needs d >= K (got d = {}, K = {})", feature_dim,
                                         num_classes()));
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw DomainError(fmt::format("learning rate must be positive (got {})", lr));
    }
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
        throw DomainError(fmt::format("weight decay must be nonnegative (got {})", weight_decay));
    }
    if (iterations < 0 || eval_every < 1) {
        throw DomainError(
            fmt::format("need iterations >= 0 and eval_every >= 1 (got {}, {})", iterations, eval_every));
    }
    if (train_scenes < 1 || eval_scenes < 1 || batch_scenes < 1) {
        throw DomainError("scene pool and batch sizes must be positive");
    }
    if (static_cast<std::uint64_t>(train_scenes) >= kEvalOffset ||
        static_cast<std::uint64_t>(eval_scenes) >= kEvalOffset) {
        throw DomainError("scene pools are too large for the seed layout");
    }
}

const EvalRecord& TrainLog::final_record() const {
    if (records.empty()) {
        throw ConsistencyError("training log is empty");
    }
    return records.back();
}

std::vector<Scene> training_scenes(const TrainConfig& cfg) {
    std::vector<Scene> out;
    out.reserve(static_cast<std::size_t>(cfg.train_scenes));
    for (int i = 0; i < cfg.train_scenes; ++i) {
        out.push_back(gen_scene(scene_for(cfg, static_cast<std::uint64_t>(i))));
    }
    return out;
}

std::vector<Scene> evaluation_scenes(const TrainConfig& cfg) {
    std::vector<Scene> out;
    out.reserve(static_cast<std::size_t>(cfg.eval_scenes));
    for (int i = 0; i < cfg.eval_scenes; ++i) {
        out.push_back(gen_scene(scene_for(cfg, kEvalOffset + static_cast<std::uint64_t>(i))));
    }
    return out;
}

std::vector<int> predict(const MlpParams& params, const Matrix& inputs) {
    const ForwardResult fwd = forward(params, inputs);
    std::vector<int> out(static_cast<std::size_t>(fwd.logits.rows()));
    for (Index i = 0; i < fwd.logits.rows(); ++i) {
        Index best = 0;
        fwd.logits.row(i).maxCoeff(&best);
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

std::vector<int> predict(const TrainedModel& model, const Matrix& inputs) {
    return predict(model.params, inputs);
}

TrainResult train(const TrainConfig& cfg, const TrainOptions& options) {
    cfg.validate();
    const int K = cfg.num_classes();
    const Index d = cfg.feature_dim;

    const std::vector<Scene> train_pool = training_scenes(cfg);
    const std::vector<Scene> eval_pool = evaluation_scenes(cfg);

    Evaluator evaluator;
    evaluator.num_classes = K;
    {
        std::vector<const Scene*> ptrs;
        for (const Scene& s : eval_pool) {
            ptrs.push_back(&s);
        }
        evaluator.data = stack(ptrs);
        const std::vector<Index> counts = total_pixel_counts(train_pool, K);
        evaluator.split = head_common_tail_split(counts);
    }

    TrainResult result;
    MlpParams& params = result.model.params;
    params = MlpParams::init(cfg.scene.input_dim, cfg.hidden_dim, d, K, mix_seed(cfg.seed, kMlpStream));
    if (cfg.pr_mode == PrClassifierMode::fixed_etf) {
        params.w_pr = make_etf(d, K, cfg.alpha, mix_seed(cfg.seed, kPixelFrameStream)).matrix;
    }
    Matrix& center = result.center_classifier;
    switch (cfg.cc_mode) {
    case CenterClassifierMode::fixed_etf:
        result.model.center_frame = make_etf(d, K, cfg.alpha, mix_seed(cfg.seed, kCenterFrameStream));
        center = result.model.center_frame->matrix;
        break;
    case CenterClassifierMode::learned: {
        Rng rng(mix_seed(cfg.seed, kCenterLearnedStream));
        center.resize(d, K);
        const double scale = cfg.alpha / std::sqrt(static_cast<double>(d));
        for (Index k = 0; k < K; ++k) {
            for (Index i = 0; i < d; ++i) {
                center(i, k) = scale * rng.normal();
            }
        }
        break;
    }
    case CenterClassifierMode::off:
        break;
    }

    auto batch_for = [&](long iteration) {
        std::vector<const Scene*> ptrs;
        for (int j = 0; j < cfg.batch_scenes; ++j) {
            const long slot = (iteration - 1) * cfg.batch_scenes + j;
            ptrs.push_back(&train_pool[static_cast<std::size_t>(slot % cfg.train_scenes)]);
        }
        return stack(ptrs);
    };

    auto evaluate = [&](const LossBreakdown& losses, long iteration) {
        try {
            return evaluator.evaluate(params, losses, iteration);
        } catch (const DivergenceError& e) {
            throw TrainingDiverged(e.what(), result.log);
        }
    };

    auto log_record = [&](const EvalRecord& rec) {
        if (!finite_record(rec)) {
            throw TrainingDiverged(fmt::format("non-finite metrics at iteration {}", rec.iteration), result.log);
        }
        result.log.records.push_back(rec);
        if (options.observer) {
            options.observer(TrainProbe{result.log.records.back(), params, center});
        }
    };

    auto losses_on = [&](const StackedScenes& batch, const ForwardResult& fwd) {
        try {
            return total_loss(FeatureBatch{fwd.features, batch.labels, K}, params.w_pr, center, cfg.lambda);
        } catch (const NumericError& e) {
            throw TrainingDiverged(e.what(), result.log);
        }
    };

    {
        const long first = 1;
        const StackedScenes batch = batch_for(first);
        const ForwardResult fwd = forward(params, batch.inputs);
        log_record(evaluate(losses_on(batch, fwd).breakdown, 0));
    }

    for (long it = 1; it <= cfg.iterations; ++it) {
        const StackedScenes batch = batch_for(it);
        const ForwardResult fwd = forward(params, batch.inputs);
        const TotalLossResult loss = losses_on(batch, fwd);
        if (!std::isfinite(loss.breakdown.total)) {
            throw TrainingDiverged(fmt::format("non-finite loss at iteration {}", it), result.log);
        }
        const double lr = cfg.poly_decay ? poly_lr(cfg.lr, it - 1, cfg.iterations) : cfg.lr;
        try {
            const MlpGrads grads = backward(params, fwd.cache, loss.feature_grad, loss.pr_classifier_grad);
            sgd_step(params, grads, lr, cfg.weight_decay, cfg.pr_mode == PrClassifierMode::learned);
            if (cfg.cc_mode == CenterClassifierMode::learned && loss.center_classifier_grad.size() > 0) {
                sgd_update(center, loss.center_classifier_grad, lr, cfg.weight_decay);
            }
            // Finite gradients can still overflow the parameters.
            if (!params_finite(params) || !center.allFinite()) {
                throw DivergenceError("parameters are no longer finite");
            }
        } catch (const DivergenceError& e) {
            throw TrainingDiverged(fmt::format("iteration {}: {}", it, e.what()), result.log);
        }
        if (it % cfg.eval_every == 0 || it == cfg.iterations) {
            log_record(evaluate(loss.breakdown, it));
        }
    }
    return result;
}

std::vector<std::pair<PrClassifierMode, CenterClassifierMode>> ablation_variants() {
    return {
        {PrClassifierMode::learned, CenterClassifierMode::off},
        {PrClassifierMode::fixed_etf, CenterClassifierMode::fixed_etf},
        {PrClassifierMode::fixed_etf, CenterClassifierMode::learned},
        {PrClassifierMode::learned, CenterClassifierMode::fixed_etf},
        {PrClassifierMode::learned, CenterClassifierMode::learned},
    };
}

void run_parallel(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

std::vector<AblationRow> run_ablation_grid(const TrainConfig& base, int jobs) {
    if (!(base.lambda > 0.0)) {
        throw DomainError("the ablation grid needs a positive lambda for its center-branch variants");
    }
    const auto variants = ablation_variants();
    std::vector<AblationRow> rows(variants.size());
    run_parallel(variants.size(), jobs, [&](std::size_t i) {
        TrainConfig cfg = base;
        cfg.pr_mode = variants[i].first;
        cfg.cc_mode = variants[i].second;
        cfg.lambda = cfg.cc_mode == CenterClassifierMode::off ? 0.0 : base.lambda;
        rows[i] = AblationRow{cfg.pr_mode, cfg.cc_mode, cfg.lambda, train(cfg).log.final_record()};
    });
    return rows;
}

std::vector<double> default_lambda_grid() {
    return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
}

std::vector<SweepRow> lambda_sweep(const TrainConfig& base, std::span<const double> lambdas, int jobs) {
    for (double l : lambdas) {
        if (!(l >= 0.0) || !std::isfinite(l)) {
            throw DomainError(fmt::format("sweep lambda must be nonnegative (got {})", l));
        }
    }
    std::vector<SweepRow> rows(lambdas.size());
    run_parallel(lambdas.size(), jobs, [&](std::size_t i) {
        TrainConfig cfg = base;
        cfg.lambda = lambdas[i];
        if (cfg.cc_mode == CenterClassifierMode::off && cfg.lambda > 0.0) {
            cfg.cc_mode = CenterClassifierMode::fixed_etf;
        }
        rows[i] = SweepRow{cfg.lambda, train(cfg).log.final_record()};
    });
    return rows;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kRecordScalarKeys[] = {
    "pr_loss",        "cr_loss",       "total",           "equiang_std_centers", "maxangle_avg_centers",
    "equiang_std_classifier", "maxangle_avg_classifier", "self_duality_gap", "accuracy", "pixel_accuracy",
    "head_accuracy",  "common_accuracy", "tail_accuracy",
};

std::array<double*, 13> record_scalars(EvalRecord& r) {
    return {&r.pr_loss,
            &r.cr_loss,
            &r.total,
            &r.equiang_std_centers,
            &r.maxangle_avg_centers,
            &r.equiang_std_classifier,
            &r.maxangle_avg_classifier,
            &r.self_duality_gap,
            &r.accuracy,
            &r.pixel_accuracy,
            &r.head_accuracy,
            &r.common_accuracy,
            &r.tail_accuracy};
}

std::string final_metric_cells(const EvalRecord& r) {
    return fmt::format("{},{},{},{},{},{},{},{},{}", format_number(r.accuracy), format_number(r.pixel_accuracy),
                       format_number(r.head_accuracy), format_number(r.common_accuracy),
                       format_number(r.tail_accuracy), format_number(r.equiang_std_centers),
                       format_number(r.maxangle_avg_centers), format_number(r.self_duality_gap),
                       format_number(r.cr_loss));
}

constexpr const char* kFinalMetricHeader =
    "accuracy,pixel_accuracy,head_accuracy,common_accuracy,tail_accuracy,equiang_std_centers,"
    "maxangle_avg_centers,self_duality_gap,cr_loss";

} // namespace

std::string to_json_line(const EvalRecord& record) {
    EvalRecord copy = record;
    const auto values = record_scalars(copy);
    std::string out = fmt::format("{{\"iteration\":{}", record.iteration);
    for (std::size_t i = 0; i < values.size(); ++i) {
        out += fmt::format(",\"{}\":{}", kRecordScalarKeys[i], format_number(*values[i]));
    }
    out += ",\"per_class_accuracy\":[";
    for (std::size_t k = 0; k < record.per_class_accuracy.size(); ++k) {
        out += (k > 0 ? "," : "") + format_number(record.per_class_accuracy[k]);
    }
    out += "]}";
    return out;
}

EvalRecord eval_record_from_json(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(0, e.what());
    }
    EvalRecord rec;
    try {
        rec.iteration = j.at("iteration").get<long>();
        auto values = record_scalars(rec);
        for (std::size_t i = 0; i < values.size(); ++i) {
            *values[i] = j.at(kRecordScalarKeys[i]).get<double>();
        }
        rec.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, fmt::format("incomplete log record: {}", e.what()));
    }
    return rec;
}

void write_log_jsonl(std::ostream& out, const TrainLog& log) {
    for (const EvalRecord& rec : log.records) {
        out << to_json_line(rec) << '\n';
    }
}

TrainLog read_log_jsonl(std::istream& in) {
    TrainLog log;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            log.records.push_back(eval_record_from_json(line));
        } catch (const ParseError& e) {
            throw ParseError(number, e.what());
        }
        if (log.records.size() > 1 && log.records.back().iteration <= log.records[log.records.size() - 2].iteration) {
            throw ParseError(number, "iterations must be strictly increasing");
        }
    }
    return log;
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
    out << "pixel_classifier,center_classifier,lambda," << kFinalMetricHeader << '\n';
    for (const AblationRow& row : rows) {
        out << to_string(row.pr_mode) << ',' << to_string(row.cc_mode) << ',' << format_number(row.lambda) << ','
            << final_metric_cells(row.final) << '\n';
    }
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
    out << "lambda," << kFinalMetricHeader << ",maxangle_avg_classifier,equiang_std_classifier\n";
    for (const SweepRow& row : rows) {
        out << format_number(row.lambda) << ',' << final_metric_cells(row.final) << ','
            << format_number(row.final.maxangle_avg_classifier) << ','
            << format_number(row.final.equiang_std_classifier) << '\n';
    }
}

CsvTable read_csv(std::istream& in) {
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cell;
        for (char c : line) {
            if (c == ',') {
                cells.push_back(cell);
                cell.clear();
            } else if (c != '\r') {
                cell += c;
            }
        }
        cells.push_back(cell);
        return cells;
    };
    CsvTable table;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) {
            continue;
        }
        auto cells = split(line);
        if (table.header.empty()) {
            table.header = std::move(cells);
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw ParseError(number, fmt::format("expected {} cells, found {}", table.header.size(), cells.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    if (table.header.empty()) {
        throw ParseError(1, "missing header row");
    }
    return table;
}

} // namespace ceco
