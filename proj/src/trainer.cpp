#include "fewshot/trainer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>

#include <omp.h>

#include "fewshot/image.hpp"
#include "fewshot/rng.hpp"

namespace fewshot::trainer {

namespace fs = std::filesystem;
using episodes::EpisodeMode;

// ------------------------------------------------------------------ config

TrainConfig TrainConfig::full()
{
    return TrainConfig{};
}

TrainConfig TrainConfig::desk()
{
    TrainConfig c;
    c.lr = 0.02;
    c.train_tasks = 300;
    c.max_epochs = 3;
    c.eval_tasks = 200;
    c.train_size = 64;
    c.test_size = 64;
    c.folds = 5;
    c.model.encoder = model::EncoderKind::TinyTestCnn;
    c.model.encoder_width = 16;
    c.model.encoder_channels = 32;
    c.model.embedding_dim = 16;
    c.model.semantic_dim = 32;
    c.model.decoder_channels = 32;
    return c;
}

int TrainConfig::steps_per_epoch() const
{
    return std::max(1, train_tasks / batch_size / max_epochs);
}

int TrainConfig::total_steps() const
{
    return steps_per_epoch() * max_epochs;
}

double TrainConfig::lr_at_epoch(int epoch) const
{
    double lr_now = lr;
    for (int d : decay_epochs)
        if (epoch >= d)
            lr_now *= decay_factor;
    return lr_now;
}

void TrainConfig::validate() const
{
    auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::InvalidArgument, what); };
    check(lr >= 0.0 && std::isfinite(lr), "lr must be finite and nonnegative");
    check(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0,1)");
    check(weight_decay >= 0.0, "weight_decay must be nonnegative");
    check(std::is_sorted(decay_epochs.begin(), decay_epochs.end()) &&
              std::adjacent_find(decay_epochs.begin(), decay_epochs.end()) == decay_epochs.end(),
          "decay_epochs must be strictly increasing");
    check(decay_factor > 0.0, "decay_factor must be positive");
    check(batch_size >= 1 && max_epochs >= 1 && train_tasks >= 1 && eval_tasks >= 1,
          "batch_size, max_epochs, train_tasks and eval_tasks must be positive");
    check(!seeds.empty(), "seeds must not be empty");
    check(train_size >= 8 && test_size >= 8, "input sizes must be at least 8");
    check(shots >= 1 && queries >= 1, "shots and queries must be positive");
    check(folds >= 1 && fold >= 0 && fold < folds, "fold must be in [0, folds)");
    check(workers >= 1, "workers must be positive");
}

namespace {

std::string trim(std::string s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text)
{
    T value{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    require(res.ec == std::errc() && res.ptr == text.data() + text.size(), ErrorKind::InvalidArgument,
            "bad value '" + text + "' for " + key);
    return value;
}

bool parse_bool(const std::string& key, const std::string& text)
{
    if (text == "true" || text == "1" || text == "yes")
        return true;
    if (text == "false" || text == "0" || text == "no")
        return false;
    fail(ErrorKind::InvalidArgument, "bad boolean '" + text + "' for " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text)
{
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!trim(item).empty())
            out.push_back(parse_number<T>(key, trim(item)));
    return out;
}

template <typename T>
std::string join(const std::vector<T>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i)
            out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

}  // namespace

void TrainConfig::set(const std::string& raw_key, const std::string& raw_value)
{
    const std::string key = trim(raw_key);
    const std::string value = trim(raw_value);
    if (key == "preset") {
        if (value == "full")
            *this = full();
        else if (value == "desk")
            *this = desk();
        else
            fail(ErrorKind::InvalidArgument, "unknown preset '" + value + "'");
    } else if (key == "lr") {
        lr = parse_number<double>(key, value);
    } else if (key == "momentum") {
        momentum = parse_number<double>(key, value);
    } else if (key == "weight_decay") {
        weight_decay = parse_number<double>(key, value);
    } else if (key == "decay_epochs") {
        decay_epochs = parse_list<int>(key, value);
    } else if (key == "decay_factor") {
        decay_factor = parse_number<double>(key, value);
    } else if (key == "batch_size") {
        batch_size = parse_number<int>(key, value);
    } else if (key == "max_epochs") {
        max_epochs = parse_number<int>(key, value);
    } else if (key == "train_tasks") {
        train_tasks = parse_number<int>(key, value);
    } else if (key == "eval_tasks") {
        eval_tasks = parse_number<int>(key, value);
    } else if (key == "seeds") {
        seeds = parse_list<std::uint64_t>(key, value);
    } else if (key == "train_size") {
        train_size = parse_number<int>(key, value);
    } else if (key == "test_size") {
        test_size = parse_number<int>(key, value);
    } else if (key == "mode") {
        mode = episodes::parse_mode(value);
    } else if (key == "shots") {
        shots = parse_number<int>(key, value);
    } else if (key == "queries") {
        queries = parse_number<int>(key, value);
    } else if (key == "folds") {
        folds = parse_number<int>(key, value);
    } else if (key == "fold") {
        fold = parse_number<int>(key, value);
    } else if (key == "augment") {
        augment = parse_bool(key, value);
    } else if (key == "workers") {
        workers = parse_number<int>(key, value);
    } else if (key == "check_leakage") {
        check_leakage = parse_bool(key, value);
    } else if (key == "embeddings") {
        embeddings = value;
    } else if (key == "model.variant") {
        model.variant = coattention::parse_variant(value);
    } else if (key == "model.interaction") {
        model.interaction = model::parse_interaction(value);
    } else if (key == "model.encoder") {
        model.encoder = model::parse_encoder(value);
    } else if (key == "model.encoder_weights") {
        model.encoder_weights = value;
    } else if (key == "model.encoder_width") {
        model.encoder_width = parse_number<int>(key, value);
    } else if (key == "model.encoder_channels") {
        model.encoder_channels = parse_number<int>(key, value);
    } else if (key == "model.feature_norm") {
        model.feature_norm = parse_number<double>(key, value);
    } else if (key == "model.embedding_dim") {
        model.embedding_dim = parse_number<int>(key, value);
    } else if (key == "model.semantic_dim") {
        model.semantic_dim = parse_number<int>(key, value);
    } else if (key == "model.semantic_relu") {
        model.semantic_relu = parse_bool(key, value);
    } else if (key == "model.stack_depth") {
        model.stack_depth = parse_number<int>(key, value);
    } else if (key == "model.share_stack_weights") {
        model.share_stack_weights = parse_bool(key, value);
    } else if (key == "model.shared_gate") {
        model.shared_gate = parse_bool(key, value);
    } else if (key == "model.decoder_channels") {
        model.decoder_channels = parse_number<int>(key, value);
    } else if (key == "model.decoder_iterations") {
        model.decoder_iterations = parse_number<int>(key, value);
    } else {
        fail(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
    }
}

void TrainConfig::read(std::istream& in)
{
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::InvalidArgument,
                "config line " + std::to_string(number) + " is not 'key = value'");
        set(line.substr(0, eq), line.substr(eq + 1));
    }
}

void TrainConfig::read(const fs::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open config " + path.string());
    read(in);
}

std::string TrainConfig::to_text() const
{
    std::ostringstream out;
    out << "lr = " << format_double(lr) << '\n'
        << "momentum = " << format_double(momentum) << '\n'
        << "weight_decay = " << format_double(weight_decay) << '\n'
        << "decay_epochs = " << join(decay_epochs) << '\n'
        << "decay_factor = " << format_double(decay_factor) << '\n'
        << "batch_size = " << batch_size << '\n'
        << "max_epochs = " << max_epochs << '\n'
        << "train_tasks = " << train_tasks << '\n'
        << "eval_tasks = " << eval_tasks << '\n'
        << "seeds = " << join(seeds) << '\n'
        << "train_size = " << train_size << '\n'
        << "test_size = " << test_size << '\n'
        << "mode = " << episodes::to_string(mode) << '\n'
        << "shots = " << shots << '\n'
        << "queries = " << queries << '\n'
        << "folds = " << folds << '\n'
        << "fold = " << fold << '\n'
        << "augment = " << (augment ? "true" : "false") << '\n'
        << "workers = " << workers << '\n'
        << "check_leakage = " << (check_leakage ? "true" : "false") << '\n'
        << "embeddings = " << embeddings << '\n'
        << "model.variant = " << coattention::to_string(model.variant) << '\n'
        << "model.interaction = " << model::to_string(model.interaction) << '\n'
        << "model.encoder = " << model::to_string(model.encoder) << '\n'
        << "model.encoder_weights = " << model.encoder_weights << '\n'
        << "model.encoder_width = " << model.encoder_width << '\n'
        << "model.encoder_channels = " << model.encoder_channels << '\n'
        << "model.feature_norm = " << format_double(model.feature_norm) << '\n'
        << "model.embedding_dim = " << model.embedding_dim << '\n'
        << "model.semantic_dim = " << model.semantic_dim << '\n'
        << "model.semantic_relu = " << (model.semantic_relu ? "true" : "false") << '\n'
        << "model.stack_depth = " << model.stack_depth << '\n'
        << "model.share_stack_weights = " << (model.share_stack_weights ? "true" : "false") << '\n'
        << "model.shared_gate = " << (model.shared_gate ? "true" : "false") << '\n'
        << "model.decoder_channels = " << model.decoder_channels << '\n'
        << "model.decoder_iterations = " << model.decoder_iterations << '\n';
    return out.str();
}

nlohmann::json TrainConfig::to_json() const
{
    return {{"lr", lr},
            {"momentum", momentum},
            {"weight_decay", weight_decay},
            {"decay_epochs", decay_epochs},
            {"decay_factor", decay_factor},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"steps_per_epoch", steps_per_epoch()},
            {"train_tasks", train_tasks},
            {"eval_tasks", eval_tasks},
            {"seeds", seeds},
            {"train_size", train_size},
            {"test_size", test_size},
            {"mode", episodes::to_string(mode)},
            {"shots", shots},
            {"queries", queries},
            {"folds", folds},
            {"fold", fold},
            {"augment", augment},
            {"model", model.to_json()}};
}

// --------------------------------------------------------------- optimizer

MomentumSgd::MomentumSgd(std::vector<Parameter*> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay)
{
    for (Parameter* p : params_)
        velocity_.push_back(Tensor::zeros_like(p->value));
}

void MomentumSgd::step(const ag::GradientMap& grads, double scale)
{
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        const auto it = grads.find(&p);
        const double* g = it == grads.end() ? nullptr : it->second.data();
        double* v = velocity_[i].data();
        double* w = p.value.data();
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double grad = (g ? g[j] * scale : 0.0) + weight_decay_ * w[j];
            v[j] = momentum_ * v[j] + grad;
            w[j] -= lr_ * v[j];
        }
    }
}

// ----------------------------------------------------------------- trainer

ag::Var episode_loss(const model::Model& model, const TrainingTask& task)
{
    require(task.query_masks.size() == task.input.query_images.size(), ErrorKind::ShapeMismatch,
            "every query needs a ground-truth mask");
    const model::EpisodeForward fwd = model.forward(task.input);
    ag::Var total;
    for (std::size_t q = 0; q < fwd.outputs.size(); ++q) {
        const image::Mask& m = task.query_masks[q];
        const ag::Var& logits = fwd.outputs[q].logits;
        require(logits.dim(1) == m.height && logits.dim(2) == m.width, ErrorKind::ShapeMismatch,
                "query mask size differs from the query image");
        const ag::Var l = ag::cross_entropy(logits, m.ids, image::kIgnore);
        total = total.defined() ? ag::add(total, l) : l;
    }
    return ag::scale(total, 1.0 / static_cast<double>(fwd.outputs.size()));
}

namespace {

template <typename F>
void parallel_for(int n, int workers, F&& body)
{
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static, 1) num_threads(workers) if (workers > 1 && n > 1)
    for (int i = 0; i < n; ++i) {
        try {
            body(i);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

}  // namespace

Trainer::Trainer(model::Model& model, const TrainConfig& config)
    : model_(&model),
      config_(config),
      optimizer_(model.trainable_parameters(), config.lr, config.momentum, config.weight_decay)
{
    config_.validate();
}

void Trainer::set_epoch(int epoch)
{
    optimizer_.set_lr(config_.lr_at_epoch(epoch));
}

double Trainer::step(std::span<const TrainingTask> batch)
{
    require(!batch.empty(), ErrorKind::InvalidArgument, "empty training batch");
    const int n = static_cast<int>(batch.size());
    std::vector<ag::GradientMap> grads(batch.size());
    std::vector<double> losses(batch.size());
    parallel_for(n, config_.workers, [&](int i) {
        const ag::Var loss = episode_loss(*model_, batch[static_cast<std::size_t>(i)]);
        losses[static_cast<std::size_t>(i)] = loss.value()[0];
        ag::backward(loss, &grads[static_cast<std::size_t>(i)]);
    });
    double mean = 0.0;
    for (double l : losses)
        mean += l;
    mean /= n;
    require(std::isfinite(mean), ErrorKind::DivergenceDetected, "training loss became non-finite");

    ag::GradientMap total;
    for (Parameter* p : model_->trainable_parameters()) {
        Tensor acc = Tensor::zeros_like(p->value);
        bool any = false;
        for (const auto& g : grads) {
            const auto it = g.find(p);
            if (it == g.end())
                continue;
            acc += it->second;
            any = true;
        }
        if (any) {
            require(acc.all_finite(), ErrorKind::DivergenceDetected, "gradient of " + p->name + " became non-finite");
            total.emplace(p, std::move(acc));
        }
    }
    optimizer_.step(total, 1.0 / n);
    return mean;
}

// ------------------------------------------------------------- experiments

std::unique_ptr<semantics::EmbeddingProvider> make_provider(const TrainConfig& config, const fs::path& dataset_root)
{
    fs::path file = config.embeddings;
    if (file.empty() && fs::exists(dataset_root / "embeddings.txt"))
        file = dataset_root / "embeddings.txt";
    if (!file.empty())
        return std::make_unique<semantics::FileEmbeddingProvider>(semantics::FileEmbeddingProvider::load(file));
    return std::make_unique<semantics::HashEmbeddingProvider>(config.model.embedding_dim);
}

episodes::FoldSpec select_fold(const episodes::DatasetManifest& manifest, const TrainConfig& config)
{
    const auto classes = episodes::canonical_order(manifest.classes());
    const int n = static_cast<int>(classes.size());
    require(config.folds >= 1 && n % config.folds == 0, ErrorKind::BadPartition,
            std::to_string(n) + " classes cannot be split into " + std::to_string(config.folds) + " equal folds");
    const auto folds = episodes::make_folds(classes, config.folds, n / config.folds);
    require(config.fold >= 0 && config.fold < config.folds, ErrorKind::InvalidArgument, "fold out of range");
    return folds[static_cast<std::size_t>(config.fold)];
}

TrainingTask prepare_task(const Experiment& ex, const episodes::Episode& episode, int size, bool augment,
                          std::uint64_t augment_seed)
{
    episodes::MaterializeOptions opts;
    opts.size = size;
    opts.augment_support = augment;
    opts.augment_seed = augment_seed;
    episodes::EpisodeData data = episodes::materialize(*ex.manifest, episode, opts);
    TrainingTask task;
    for (const image::Image& img : data.support_images)
        task.input.support_images.push_back(image::to_tensor(img));
    for (const image::Image& img : data.query_images)
        task.input.query_images.push_back(image::to_tensor(img));
    task.input.label_embedding = ex.embeddings->lookup(episode.label).vector;
    task.query_masks = std::move(data.query_masks);
    return task;
}

nlohmann::json RunRecord::to_json() const
{
    nlohmann::json j = {{"seed", seed},   {"status", status},           {"steps", steps},
                        {"tasks", tasks}, {"epoch_losses", epoch_losses}, {"lr_per_epoch", lr_per_epoch}};
    if (metrics)
        j["metrics"] = *metrics;
    if (!checkpoint.empty())
        j["checkpoint"] = checkpoint;
    return j;
}

namespace {

constexpr std::uint64_t kTrainStream = 101;
constexpr std::uint64_t kAugmentStream = 102;
constexpr std::uint64_t kTestStream = 201;

std::vector<Tensor> snapshot(const model::Model& m)
{
    std::vector<Tensor> out;
    for (const Parameter* p : m.parameters())
        if (!p->trainable)
            out.push_back(p->value);
    return out;
}

bool bit_identical(const Tensor& a, const Tensor& b)
{
    return a.same_shape(b) && std::equal(a.data(), a.data() + a.size(), b.data(), [](double x, double y) {
               return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
           });
}

}  // namespace

void meta_train(model::Model& model, const Experiment& ex, const TrainConfig& config, std::uint64_t seed,
                RunRecord& record, const LogFn& log)
{
    config.validate();
    require(ex.manifest && ex.embeddings, ErrorKind::InvalidArgument, "experiment lacks a dataset or embeddings");
    require(!model.config().uses_semantics() || ex.embeddings->dimension() == model.config().embedding_dim,
            ErrorKind::ConfigMismatch,
            "word vectors have dimension " + std::to_string(ex.embeddings->dimension()) + ", model expects " +
                std::to_string(model.config().embedding_dim));
    record.seed = seed;
    const std::vector<Tensor> frozen = snapshot(model);

    episodes::SamplerConfig sc{config.mode, episodes::Split::MetaTrain, config.shots, config.queries};
    const episodes::EpisodeSampler sampler(*ex.manifest, ex.fold, sc, derive_seed(seed, kTrainStream));
    const std::uint64_t augment_seed = derive_seed(seed, kAugmentStream);
    Trainer trainer(model, config);

    const int steps = config.steps_per_epoch();
    const int bs = config.batch_size;
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        trainer.set_epoch(epoch);
        record.lr_per_epoch.push_back(trainer.learning_rate());
        double loss_sum = 0.0;
        for (int s = 0; s < steps; ++s) {
            const std::uint64_t first = static_cast<std::uint64_t>(record.steps) * static_cast<std::uint64_t>(bs);
            std::vector<TrainingTask> batch(static_cast<std::size_t>(bs));
            parallel_for(bs, config.workers, [&](int b) {
                const episodes::Episode ep = sampler.sample(first + static_cast<std::uint64_t>(b));
                if (config.check_leakage)
                    require(!ex.fold.is_test_class(ep.label), ErrorKind::BadPartition,
                            "meta-test class '" + ep.label + "' reached a training batch");
                batch[static_cast<std::size_t>(b)] = prepare_task(ex, ep, config.train_size, config.augment, augment_seed);
            });
            double loss = 0.0;
            try {
                loss = trainer.step(batch);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::DivergenceDetected)
                    throw;
                record.status = "diverged";
                throw DivergenceError(e.what(), record);
            }
            loss_sum += loss;
            record.steps += 1;
            record.tasks += bs;
            if (log)
                log({{"event", "step"}, {"seed", seed}, {"epoch", epoch}, {"step", record.steps}, {"loss", loss},
                     {"lr", trainer.learning_rate()}});
        }
        record.epoch_losses.push_back(loss_sum / steps);
        if (log)
            log({{"event", "epoch"}, {"seed", seed}, {"epoch", epoch}, {"loss", record.epoch_losses.back()},
                 {"lr", trainer.learning_rate()}});
    }

    const std::vector<Tensor> after = snapshot(model);
    for (std::size_t i = 0; i < frozen.size(); ++i)
        if (!bit_identical(frozen[i], after[i]))
            throw std::logic_error("frozen encoder parameters changed during training");
}

model::Model meta_train(const Experiment& ex, const TrainConfig& config, std::uint64_t seed, RunRecord& record,
                        const LogFn& log)
{
    model::ModelConfig mc = config.model;
    mc.init_seed = seed;
    model::Model m(mc);
    meta_train(m, ex, config, seed, record, log);
    return m;
}

EvalResult meta_test(const model::Model& model, const Experiment& ex, const TrainConfig& config, std::uint64_t seed)
{
    config.validate();
    require(ex.manifest && ex.embeddings, ErrorKind::InvalidArgument, "experiment lacks a dataset or embeddings");
    episodes::SamplerConfig sc{config.mode, episodes::Split::MetaTest, config.shots, config.queries};
    const episodes::EpisodeSampler sampler(*ex.manifest, ex.fold, sc, derive_seed(seed, kTestStream));

    const int n = config.eval_tasks;
    std::vector<metrics::ConfusionAccumulator> per_task(static_cast<std::size_t>(n));
    parallel_for(n, config.workers, [&](int i) {
        const ag::NoGradGuard no_grad;
        const episodes::Episode ep = sampler.sample(static_cast<std::uint64_t>(i));
        const TrainingTask task = prepare_task(ex, ep, config.test_size, false, 0);
        const model::EpisodeForward fwd = model.forward(task.input);
        for (std::size_t q = 0; q < fwd.outputs.size(); ++q) {
            const Tensor& p = fwd.outputs[q].probability;
            const int h = p.dim(1);
            const int w = p.dim(2);
            image::Mask pred(w, h);
            const std::size_t plane = static_cast<std::size_t>(h) * w;
            for (std::size_t k = 0; k < plane; ++k)
                pred.ids[k] = p[plane + k] > p[k] ? 1 : 0;
            per_task[static_cast<std::size_t>(i)].accumulate(pred, task.query_masks[q], ep.class_index);
        }
    });
    EvalResult r;
    for (const auto& acc : per_task)
        r.accumulator.merge(acc);

    std::vector<int> fold_classes;
    for (const std::string& name : ex.fold.test_classes)
        fold_classes.push_back(ex.manifest->class_index(name));
    r.report = metrics::to_json(r.accumulator, fold_classes, ex.manifest->classes());
    r.report["tasks"] = n;
    r.report["seed"] = seed;
    r.report["fold"] = ex.fold.fold_id;
    r.report["mode"] = episodes::to_string(config.mode);
    r.report["shots"] = config.shots;
    return r;
}

nlohmann::json MultiSeedReport::to_json() const
{
    nlohmann::json j = {{"runs", nlohmann::json::array()}};
    std::vector<double> mious;
    std::vector<double> bious;
    for (const RunRecord& r : runs) {
        j["runs"].push_back(r.to_json());
        if (r.metrics) {
            mious.push_back(r.metrics->at("miou").get<double>());
            bious.push_back(r.metrics->at("biou").get<double>());
        }
    }
    if (miou)
        j["miou"] = metrics::to_json(*miou, mious);
    if (biou)
        j["biou"] = metrics::to_json(*biou, bious);
    return j;
}

MultiSeedReport multi_seed(const Experiment& ex, const TrainConfig& config, bool allow_partial, const LogFn& log,
                           const fs::path& run_dir)
{
    config.validate();
    MultiSeedReport report;
    std::vector<double> mious;
    std::vector<double> bious;
    for (std::uint64_t seed : config.seeds) {
        RunRecord record;
        try {
            model::Model m = meta_train(ex, config, seed, record, log);
            const EvalResult eval = meta_test(m, ex, config, seed);
            record.metrics = eval.report;
            mious.push_back(eval.report.at("miou").get<double>());
            bious.push_back(eval.report.at("biou").get<double>());
            if (!run_dir.empty()) {
                const fs::path dir = run_dir / ("seed_" + std::to_string(seed));
                fs::create_directories(dir);
                m.save(dir / "checkpoint.bin");
                record.checkpoint = "seed_" + std::to_string(seed) + "/checkpoint.bin";
                std::ofstream(dir / "run.json") << record.to_json().dump(2) << '\n';
            }
            if (log)
                log({{"event", "run"}, {"seed", seed}, {"miou", mious.back()}, {"biou", bious.back()}});
        } catch (const DivergenceError& e) {
            if (!allow_partial)
                throw;
            record = e.record();
        } catch (const Error& e) {
            if (!allow_partial)
                throw;
            record.seed = seed;
            record.status = std::string("failed: ") + e.what();
        }
        report.runs.push_back(std::move(record));
    }
    if (mious.size() >= 2) {
        report.miou = metrics::aggregate_runs(mious);
        report.biou = metrics::aggregate_runs(bious);
    }
    return report;
}

}  // namespace fewshot::trainer
