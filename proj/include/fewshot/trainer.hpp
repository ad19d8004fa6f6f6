#pragma once

// Episodic meta-training and meta-testing.
//
// An epoch is train_tasks / batch_size / max_epochs optimizer steps, so the
// whole schedule samples train_tasks tasks (12,000 tasks over 50 epochs at
// batch 4 gives 60 steps per epoch). Epochs are counted from 0 and the
// learning rate is multiplied by decay_factor once epoch >= each decay epoch.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fewshot/autograd.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/error.hpp"
#include "fewshot/metrics.hpp"
#include "fewshot/model.hpp"
#include "fewshot/semantics.hpp"
#include "json.hpp"

namespace fewshot::trainer {

struct TrainConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> decay_epochs = {35, 40, 45};
    double decay_factor = 0.1;
    int batch_size = 4;
    int max_epochs = 50;
    int train_tasks = 12000;
    int eval_tasks = 5000;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    int train_size = 321;
    int test_size = 500;
    episodes::EpisodeMode mode = episodes::EpisodeMode::Static;
    int shots = 1;
    int queries = 1;
    int folds = 4;  // classes are split into this many equal folds
    int fold = 0;
    bool augment = true;
    int workers = 1;
    bool check_leakage = true;
    std::string embeddings;  // word-vector file; empty: <dataset>/embeddings.txt or hashed vectors
    model::ModelConfig model;

    /// Paper-scale static benchmark settings.
    static TrainConfig full();
    /// Tiny encoder, 300 tasks, 3 epochs, 64-pixel inputs for the synthetic shapes data.
    static TrainConfig desk();

    int steps_per_epoch() const;
    int total_steps() const;
    double lr_at_epoch(int epoch) const;
    void validate() const;

    /// Applies one `key = value` setting; throws InvalidArgument for unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    /// Reads `key = value` lines ('#' starts a comment). A `preset = full|desk` line resets all fields.
    void read(std::istream& in);
    void read(const std::filesystem::path& path);
    std::string to_text() const;
    nlohmann::json to_json() const;
};

/// PyTorch-style momentum SGD: v = μv + (g + λp); p -= lr·v.
class MomentumSgd {
public:
    MomentumSgd(std::vector<Parameter*> params, double lr, double momentum, double weight_decay);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    /// Gradients are multiplied by `scale` first; parameters without a gradient use g = 0.
    void step(const ag::GradientMap& grads, double scale = 1.0);

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> velocity_;
    double lr_;
    double momentum_;
    double weight_decay_;
};

/// Model inputs plus per-query ground truth (0 background, 1 foreground, kIgnore).
struct TrainingTask {
    model::TaskInput input;
    std::vector<image::Mask> query_masks;
};

/// Mean per-pixel cross-entropy over the episode's queries.
ag::Var episode_loss(const model::Model& model, const TrainingTask& task);

/// One optimizer over the model's trainable parameters with the configured schedule.
class Trainer {
public:
    Trainer(model::Model& model, const TrainConfig& config);

    void set_epoch(int epoch);
    double learning_rate() const { return optimizer_.lr(); }
    /// Forward/backward of every task (in parallel), fixed-order gradient reduction,
    /// one update with the batch-mean gradient. Returns the batch-mean loss.
    /// Throws DivergenceDetected for a non-finite loss (parameters are left untouched).
    double step(std::span<const TrainingTask> batch);

private:
    model::Model* model_;
    TrainConfig config_;
    MomentumSgd optimizer_;
};

/// Support label embeddings for episodes.
std::unique_ptr<semantics::EmbeddingProvider> make_provider(const TrainConfig& config,
                                                            const std::filesystem::path& dataset_root);

struct Experiment {
    const episodes::DatasetManifest* manifest = nullptr;
    episodes::FoldSpec fold;
    const semantics::EmbeddingProvider* embeddings = nullptr;
};

/// Fold `config.fold` of `config.folds` over the canonical class order.
episodes::FoldSpec select_fold(const episodes::DatasetManifest& manifest, const TrainConfig& config);

/// Loads pixels, resizes (and augments supports when training) and looks up the label embedding.
TrainingTask prepare_task(const Experiment& ex, const episodes::Episode& episode, int size, bool augment,
                          std::uint64_t augment_seed);

struct RunRecord {
    std::uint64_t seed = 0;
    std::vector<double> epoch_losses;  // mean loss per epoch
    std::vector<double> lr_per_epoch;
    int steps = 0;
    int tasks = 0;
    std::optional<nlohmann::json> metrics;
    std::string checkpoint;
    std::string status = "ok";

    nlohmann::json to_json() const;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& message, RunRecord record)
        : Error(ErrorKind::DivergenceDetected, message), record_(std::move(record))
    {
    }
    const RunRecord& record() const { return record_; }

private:
    RunRecord record_;
};

using LogFn = std::function<void(const nlohmann::json&)>;

/// Builds a model with init_seed = seed and trains it on the fold's meta-train classes.
/// Encoder parameters are checked to be bit-identical afterwards.
model::Model meta_train(const Experiment& ex, const TrainConfig& config, std::uint64_t seed, RunRecord& record,
                        const LogFn& log = {});
/// Continues training an existing model.
void meta_train(model::Model& model, const Experiment& ex, const TrainConfig& config, std::uint64_t seed,
                RunRecord& record, const LogFn& log = {});

struct EvalResult {
    metrics::ConfusionAccumulator accumulator;
    nlohmann::json report;  // metrics::to_json plus task count and seed
};

/// eval_tasks meta-test episodes on the fold's held-out classes; no parameter changes.
EvalResult meta_test(const model::Model& model, const Experiment& ex, const TrainConfig& config, std::uint64_t seed);

struct MultiSeedReport {
    std::vector<RunRecord> runs;
    std::optional<metrics::RunAggregate> miou;
    std::optional<metrics::RunAggregate> biou;

    nlohmann::json to_json() const;
};

/// meta_train + meta_test per seed. With allow_partial a failing run is recorded and skipped.
MultiSeedReport multi_seed(const Experiment& ex, const TrainConfig& config, bool allow_partial = false,
                           const LogFn& log = {}, const std::filesystem::path& run_dir = {});

}  // namespace fewshot::trainer
