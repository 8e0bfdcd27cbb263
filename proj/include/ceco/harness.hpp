#pragma once

// Experiment driver: the training loop for the two-branch loss, periodic
// evaluation on held-out scenes, the classifier ablation grid and the loss
// weight sweep, plus their on-disk formats.

#include "ceco/errors.hpp"
#include "ceco/etf.hpp"
#include "ceco/linalg.hpp"
#include "ceco/toy_model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ceco {

enum class PrClassifierMode { learned, fixed_etf };
enum class CenterClassifierMode { fixed_etf, learned, off };

std::string_view to_string(PrClassifierMode mode);
std::string_view to_string(CenterClassifierMode mode);
PrClassifierMode parse_pr_mode(std::string_view text);
CenterClassifierMode parse_cc_mode(std::string_view text);

struct TrainConfig {
    // Scene geometry, class count and noise model. `scene.seed` and
    // `scene.prototype_seed` are ignored: every scene seed is derived from
    // `seed` below, training and evaluation scenes from disjoint ranges.
    SceneConfig scene;
    int hidden_dim = 32;
    int feature_dim = 16;
    double lambda = 0.4;
    double alpha = 1.0;
    PrClassifierMode pr_mode = PrClassifierMode::learned;
    CenterClassifierMode cc_mode = CenterClassifierMode::fixed_etf;
    double lr = 0.1;
    double weight_decay = 5e-4;
    long iterations = 600;
    long eval_every = 100;
    int train_scenes = 16;
    int eval_scenes = 4;
    int batch_scenes = 2;
    bool poly_decay = false;
    std::uint64_t seed = 1;

    int num_classes() const { return scene.num_classes; }

    void validate() const;
};

struct EvalRecord {
    long iteration = 0;
    double pr_loss = 0.0;
    double cr_loss = 0.0;
    double total = 0.0;
    double equiang_std_centers = 0.0;
    double maxangle_avg_centers = 0.0;
    double equiang_std_classifier = 0.0;
    double maxangle_avg_classifier = 0.0;
    double self_duality_gap = 0.0;
    double accuracy = 0.0;       // mean of per-class accuracies
    double pixel_accuracy = 0.0; // fraction of correct pixels
    double head_accuracy = 0.0;
    double common_accuracy = 0.0;
    double tail_accuracy = 0.0;
    std::vector<double> per_class_accuracy;
};

struct TrainLog {
    std::vector<EvalRecord> records;

    const EvalRecord& final_record() const;
};

// What evaluation needs: only the perceptron. The center frame is kept for
// inspection and never consulted by predict().
struct TrainedModel {
    MlpParams params;
    std::optional<EtfFrame> center_frame;
};

struct TrainResult {
    TrainLog log;
    TrainedModel model;
    Matrix center_classifier; // fixed frame, learned matrix, or empty when off
};

// Snapshot handed to an observer at every evaluation.
struct TrainProbe {
    const EvalRecord& record;
    const MlpParams& params;
    const Matrix& center_classifier;
};

struct TrainOptions {
    std::function<void(const TrainProbe&)> observer;
};

// Thrown when a loss or gradient becomes non-finite. Carries every record
// logged before the failure.
class TrainingDiverged : public DivergenceError {
public:
    TrainingDiverged(const std::string& what, TrainLog partial)
        : DivergenceError(what), partial_(std::move(partial)) {}

    const TrainLog& partial_log() const { return partial_; }

private:
    TrainLog partial_;
};

TrainResult train(const TrainConfig& cfg, const TrainOptions& options = {});

// argmax of the pixel logits, per input row.
std::vector<int> predict(const MlpParams& params, const Matrix& inputs);
std::vector<int> predict(const TrainedModel& model, const Matrix& inputs);

// Scenes the harness trains and evaluates on for a configuration.
std::vector<Scene> training_scenes(const TrainConfig& cfg);
std::vector<Scene> evaluation_scenes(const TrainConfig& cfg);

struct AblationRow {
    PrClassifierMode pr_mode = PrClassifierMode::learned;
    CenterClassifierMode cc_mode = CenterClassifierMode::off;
    double lambda = 0.0;
    EvalRecord final;
};

// The five classifier variants, in the order
// learned/-, fixed/fixed, fixed/learned, learned/fixed, learned/learned.
std::vector<std::pair<PrClassifierMode, CenterClassifierMode>> ablation_variants();

// Runs every variant with base's seeds. The "-" variant uses lambda = 0;
// the others use base.lambda, which must be positive.
std::vector<AblationRow> run_ablation_grid(const TrainConfig& base, int jobs = 1);

struct SweepRow {
    double lambda = 0.0;
    EvalRecord final;
};

std::vector<double> default_lambda_grid();

std::vector<SweepRow> lambda_sweep(const TrainConfig& base, std::span<const double> lambdas, int jobs = 1);

// One JSON object per record, one record per line.
std::string to_json_line(const EvalRecord& record);
EvalRecord eval_record_from_json(const std::string& line);
void write_log_jsonl(std::ostream& out, const TrainLog& log);
TrainLog read_log_jsonl(std::istream& in);

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(std::istream& in);

// Calls fn(i) for i in [0, count) on up to `jobs` threads.
void run_parallel(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

} // namespace ceco
