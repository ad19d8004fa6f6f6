#include "fewshot/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "fewshot/episodes.hpp"
#include "fewshot/error.hpp"
#include "fewshot/kernels.hpp"
#include "fewshot/metrics.hpp"
#include "fewshot/model.hpp"
#include "fewshot/synth.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot::cli {

namespace fs = std::filesystem;
using nlohmann::json;

image::LabelMap gate_image(const Tensor& gate, int width, int height)
{
    require(gate.rank() == 3, ErrorKind::ShapeMismatch, "gate must be (C,H,W)");
    const int c = gate.dim(0);
    const int h = gate.dim(1);
    const int w = gate.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> avg(plane, 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i)
            avg[i] += gate[static_cast<std::size_t>(ch) * plane + i];
    for (double& v : avg)
        v /= c;
    const auto [lo, hi] = std::minmax_element(avg.begin(), avg.end());
    const double min = *lo;
    const double range = *hi - *lo;
    image::LabelMap small(w, h);
    for (std::size_t i = 0; i < plane; ++i)
        small.ids[i] = range <= 1e-12 ? 128 : static_cast<std::uint8_t>(std::lround((avg[i] - min) / range * 255.0));
    return image::resize_nearest(small, width, height);
}

namespace {

int exit_code(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::Io: return kIoError;
    case ErrorKind::DivergenceDetected: return kNumericError;
    default: return kUserError;
    }
}

struct Common {
    std::string root;
    std::string config;
    std::string preset;
    std::optional<int> fold;
    std::optional<int> folds;
    std::string mode;
    std::string variant;
    std::string interaction;
    std::optional<int> k;
    std::optional<int> queries;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    bool json_out = false;
};

void add_common(CLI::App* app, Common& c, bool model_flags)
{
    app->add_option("--root", c.root, "Dataset root (manifest layout)")->required();
    app->add_option("--config", c.config, "key = value configuration file");
    app->add_option("--preset", c.preset, "Base settings: desk or full")->check(CLI::IsMember({"desk", "full"}));
    app->add_option("--fold", c.fold, "Fold index");
    app->add_option("--folds", c.folds, "Number of equal class folds");
    app->add_option("--mode", c.mode, "static, tosfl-instance or tosfl-category")
        ->check(CLI::IsMember({"static", "tosfl-instance", "tosfl-category"}));
    if (model_flags) {
        app->add_option("--variant", c.variant, "vs, v or s")->check(CLI::IsMember({"vs", "v", "s"}));
        app->add_option("--interaction", c.interaction, "cond, coatt or scoatt")
            ->check(CLI::IsMember({"cond", "coatt", "scoatt"}));
    }
    app->add_option("--k", c.k, "Support images per episode");
    app->add_option("--queries", c.queries, "Query images per episode");
    app->add_option("--seed", c.seed, "Random seed");
    app->add_option("--workers", c.workers, "Parallel episode workers");
    app->add_flag("--json", c.json_out, "Print the JSON report to stdout");
}

trainer::TrainConfig resolve(const Common& c, const std::string& fallback_preset = "desk")
{
    trainer::TrainConfig cfg;
    cfg.set("preset", c.preset.empty() ? fallback_preset : c.preset);
    if (!c.config.empty())
        cfg.read(fs::path(c.config));
    if (c.fold)
        cfg.fold = *c.fold;
    if (c.folds)
        cfg.folds = *c.folds;
    if (!c.mode.empty())
        cfg.mode = episodes::parse_mode(c.mode);
    if (!c.variant.empty())
        cfg.model.variant = coattention::parse_variant(c.variant);
    if (!c.interaction.empty())
        cfg.model.interaction = model::parse_interaction(c.interaction);
    if (c.k)
        cfg.shots = *c.k;
    if (c.queries)
        cfg.queries = *c.queries;
    if (c.seed)
        cfg.seeds = {*c.seed};
    if (c.workers)
        cfg.workers = *c.workers;
    cfg.model.validate();
    cfg.validate();
    kernels::set_threads(cfg.workers);
    return cfg;
}

struct Loaded {
    episodes::DatasetManifest manifest;
    std::unique_ptr<semantics::EmbeddingProvider> embeddings;
    trainer::Experiment experiment;
};

std::unique_ptr<Loaded> load_experiment(const Common& c, trainer::TrainConfig& cfg)
{
    auto l = std::make_unique<Loaded>();
    l->manifest = episodes::DatasetManifest::load(c.root);
    l->embeddings = trainer::make_provider(cfg, c.root);
    if (cfg.model.uses_semantics())
        cfg.model.embedding_dim = l->embeddings->dimension();
    l->experiment.manifest = &l->manifest;
    l->experiment.embeddings = l->embeddings.get();
    l->experiment.fold = trainer::select_fold(l->manifest, cfg);
    return l;
}

void write_json(const fs::path& path, const json& j)
{
    std::ofstream f(path);
    require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + path.string());
    f << j.dump(2) << '\n';
    require(static_cast<bool>(f), ErrorKind::Io, "write failed for " + path.string());
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(fs::is_directory(dir), ErrorKind::Io, "cannot create directory " + dir.string());
}

model::Model load_checkpoint(const std::string& path)
{
    try {
        return model::Model::load(path);
    } catch (const Error& e) {
        fail(ErrorKind::Io, std::string("cannot load checkpoint: ") + e.what());
    }
}

std::string relative_to(const fs::path& p, const fs::path& root)
{
    return p.lexically_relative(root).generic_string();
}

// ----------------------------------------------------------------- commands

int cmd_synth(const synth::SynthConfig& cfg, const std::string& out_dir, bool json_out, std::ostream& out,
              std::ostream& err)
{
    const episodes::DatasetManifest m = synth::generate(out_dir, cfg);
    const json summary = {{"classes", m.classes()},
                          {"images", m.records().size()},
                          {"sequences", m.sequences().size()},
                          {"video", m.is_video()},
                          {"seed", cfg.seed}};
    if (json_out)
        out << summary.dump() << '\n';
    err << "synth: wrote " << m.records().size() << " images of " << m.classes().size() << " classes to " << out_dir
        << '\n';
    return kOk;
}

int cmd_dump(const Common& c, const std::string& split_name, int count, int size, const std::string& out_dir,
             std::ostream& out, std::ostream& err)
{
    trainer::TrainConfig cfg = resolve(c);
    const auto l = load_experiment(c, cfg);
    const episodes::Split split = split_name == "meta-train" ? episodes::Split::MetaTrain : episodes::Split::MetaTest;
    const episodes::EpisodeSampler sampler(l->manifest, l->experiment.fold,
                                           {cfg.mode, split, cfg.shots, cfg.queries}, cfg.seeds.front());
    ensure_dir(out_dir);
    std::ofstream index(fs::path(out_dir) / "index.jsonl");
    require(static_cast<bool>(index), ErrorKind::Io, "cannot write index.jsonl");
    const fs::path root = l->manifest.root();
    for (int i = 0; i < count; ++i) {
        const episodes::Episode ep = sampler.sample(static_cast<std::uint64_t>(i));
        const std::string name = "episode_" + std::to_string(i);
        const fs::path dir = fs::path(out_dir) / name;
        ensure_dir(dir);
        episodes::MaterializeOptions opts;
        opts.size = size;
        const episodes::EpisodeData data = episodes::materialize(l->manifest, ep, opts);
        json line = {{"index", i},
                     {"label", ep.label},
                     {"class", ep.class_index},
                     {"mode", episodes::to_string(ep.mode)},
                     {"split", episodes::to_string(split)},
                     {"support", json::array()},
                     {"query", json::array()},
                     {"files", json::array()}};
        if (ep.support_sequence >= 0) {
            line["support_sequence"] = l->manifest.sequences()[static_cast<std::size_t>(ep.support_sequence)].name;
            line["query_sequence"] = l->manifest.sequences()[static_cast<std::size_t>(ep.query_sequence)].name;
        }
        auto dump_items = [&](const std::vector<int>& records, const std::vector<image::Image>& images,
                              const std::vector<image::Mask>& masks, const char* kind) {
            for (std::size_t j = 0; j < records.size(); ++j) {
                line[kind].push_back(relative_to(l->manifest.records()[static_cast<std::size_t>(records[j])].image, root));
                const std::string stem = std::string(kind) + "_" + std::to_string(j);
                image::write_png(dir / (stem + ".png"), images[j]);
                image::write_labels(dir / (stem + "_mask.png"), masks[j]);
                line["files"].push_back(name + "/" + stem + ".png");
                line["files"].push_back(name + "/" + stem + "_mask.png");
            }
        };
        dump_items(ep.support_records, data.support_images, data.support_masks, "support");
        dump_items(ep.query_records, data.query_images, data.query_masks, "query");
        index << line.dump() << '\n';
        if (c.json_out)
            out << line.dump() << '\n';
    }
    require(static_cast<bool>(index), ErrorKind::Io, "write failed for index.jsonl");
    err << "dump-episodes: wrote " << count << " " << episodes::to_string(cfg.mode) << " episodes of fold "
        << cfg.fold << " to " << out_dir << '\n';
    return kOk;
}

int cmd_train(const Common& c, const std::string& out_dir, bool all_seeds, bool allow_partial, bool verbose,
              std::ostream& out, std::ostream& err)
{
    trainer::TrainConfig cfg = resolve(c);
    const auto l = load_experiment(c, cfg);
    ensure_dir(out_dir);
    {
        std::ofstream snap(fs::path(out_dir) / "config.txt");
        snap << cfg.to_text();
        require(static_cast<bool>(snap), ErrorKind::Io, "cannot write config snapshot");
    }
    std::ofstream log_file(fs::path(out_dir) / "log.jsonl");
    require(static_cast<bool>(log_file), ErrorKind::Io, "cannot write log.jsonl");
    const trainer::LogFn log = [&](const json& j) {
        log_file << j.dump() << '\n';
        if (verbose)
            err << j.dump() << '\n';
    };

    json report;
    if (all_seeds) {
        const trainer::MultiSeedReport r = trainer::multi_seed(l->experiment, cfg, allow_partial, log, out_dir);
        report = r.to_json();
        report["config"] = cfg.to_json();
        if (r.miou)
            err << "train: " << r.runs.size() << " runs, mIoU " << r.miou->mean << " ± " << r.miou->ci95 << '\n';
    } else {
        const std::uint64_t seed = cfg.seeds.front();
        trainer::RunRecord record;
        try {
            model::Model m = trainer::meta_train(l->experiment, cfg, seed, record, log);
            m.save(fs::path(out_dir) / "checkpoint.bin");
            record.checkpoint = "checkpoint.bin";
        } catch (const trainer::DivergenceError& e) {
            write_json(fs::path(out_dir) / "run.json", e.record().to_json());
            throw;
        }
        report = record.to_json();
        report["config"] = cfg.to_json();
        report["fold"] = {{"id", l->experiment.fold.fold_id},
                          {"train_classes", l->experiment.fold.train_classes},
                          {"test_classes", l->experiment.fold.test_classes}};
        write_json(fs::path(out_dir) / "run.json", report);
        err << "train: seed " << seed << ", " << record.steps << " steps, final epoch loss "
            << record.epoch_losses.back() << '\n';
    }
    write_json(fs::path(out_dir) / "report.json", report);
    if (c.json_out)
        out << report.dump() << '\n';
    return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, std::optional<int> tasks, const std::string& out_path,
             std::ostream& out, std::ostream& err)
{
    trainer::TrainConfig cfg = resolve(c);
    const model::Model m = load_checkpoint(checkpoint);
    cfg.model = m.config();
    if (tasks)
        cfg.eval_tasks = *tasks;
    cfg.validate();
    const auto l = load_experiment(c, cfg);
    require(!m.config().uses_semantics() || l->embeddings->dimension() == m.config().embedding_dim,
            ErrorKind::ConfigMismatch, "word vectors do not match the checkpoint's embedding dimension");
    const trainer::EvalResult r = trainer::meta_test(m, l->experiment, cfg, cfg.seeds.front());
    if (!out_path.empty())
        write_json(out_path, r.report);
    if (c.json_out)
        out << r.report.dump() << '\n';
    err << "eval: fold " << cfg.fold << ", " << cfg.eval_tasks << " tasks, mIoU " << r.report["miou"].get<double>()
        << ", bIoU " << r.report["biou"].get<double>() << '\n';
    return kOk;
}

int cmd_attention(const Common& c, const std::string& checkpoint, int count, const std::string& out_dir,
                  std::ostream& out, std::ostream& err)
{
    trainer::TrainConfig cfg = resolve(c);
    const model::Model m = load_checkpoint(checkpoint);
    cfg.model = m.config();
    require(m.config().interaction != model::InteractionMode::Cond, ErrorKind::InvalidArgument,
            "the checkpoint has no co-attention gates (interaction = cond)");
    const auto l = load_experiment(c, cfg);
    const episodes::EpisodeSampler sampler(l->manifest, l->experiment.fold,
                                           {cfg.mode, episodes::Split::MetaTest, cfg.shots, cfg.queries},
                                           cfg.seeds.front());
    ensure_dir(out_dir);
    json index = json::array();
    const ag::NoGradGuard no_grad;
    for (int i = 0; i < count; ++i) {
        const episodes::Episode ep = sampler.sample(static_cast<std::uint64_t>(i));
        const trainer::TrainingTask task = trainer::prepare_task(l->experiment, ep, cfg.test_size, false, 0);
        const model::EpisodeForward fwd = m.forward(task.input);
        json entry = {{"episode", i}, {"label", ep.label}, {"queries", json::array()}};
        for (std::size_t q = 0; q < fwd.outputs.size(); ++q) {
            const std::string stem = "episode_" + std::to_string(i) + "_query_" + std::to_string(q);
            const Tensor& img = task.input.query_images[q];
            const int h = img.dim(1);
            const int w = img.dim(2);
            image::write_labels(fs::path(out_dir) / (stem + "_gate.png"), gate_image(fwd.query_gates[q].back().value(), w, h));
            const fs::path source = l->manifest.records()[static_cast<std::size_t>(ep.query_records[q])].image;
            image::write_png(fs::path(out_dir) / (stem + "_image.png"),
                             image::resize_bilinear(image::read_image(source), w, h));
            entry["queries"].push_back({{"gate", stem + "_gate.png"},
                                        {"image", stem + "_image.png"},
                                        {"source", relative_to(source, l->manifest.root())}});
        }
        index.push_back(entry);
    }
    const json report = {{"checkpoint_config", m.config().to_json()}, {"fold", cfg.fold}, {"maps", index}};
    write_json(fs::path(out_dir) / "maps.json", report);
    if (c.json_out)
        out << report.dump() << '\n';
    err << "attention-maps: wrote " << count << " episodes to " << out_dir << '\n';
    return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_path, bool json_out, std::ostream& out,
               std::ostream& err)
{
    std::vector<double> mious;
    std::vector<double> bious;
    json runs = json::array();
    for (const std::string& path : inputs) {
        std::ifstream f(path);
        require(static_cast<bool>(f), ErrorKind::Io, "cannot open " + path);
        json j;
        try {
            f >> j;
        } catch (const json::exception& e) {
            fail(ErrorKind::Io, path + " is not valid JSON: " + e.what());
        }
        const json& m = j.contains("metrics") ? j.at("metrics") : j;
        require(m.contains("miou") && m.contains("biou"), ErrorKind::InvalidArgument, path + " has no miou/biou");
        mious.push_back(m.at("miou").get<double>());
        bious.push_back(m.at("biou").get<double>());
        runs.push_back({{"miou", mious.back()}, {"biou", bious.back()}});
    }
    const auto miou = metrics::aggregate_runs(mious);
    const auto biou = metrics::aggregate_runs(bious);
    const json report = {{"runs", runs}, {"miou", metrics::to_json(miou, mious)}, {"biou", metrics::to_json(biou, bious)}};
    if (!out_path.empty())
        write_json(out_path, report);
    if (json_out)
        out << report.dump() << '\n';
    err << "report: " << inputs.size() << " runs, mIoU " << miou.mean << " ± " << miou.ci95 << ", bIoU " << biou.mean
        << " ± " << biou.ci95 << '\n';
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Few-shot segmentation with gated co-attention", "fewshot"};
    app.require_subcommand(1);

    synth::SynthConfig synth_cfg;
    std::string synth_out;
    bool synth_json = false;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic colored-shapes dataset");
    synth_cmd->add_option("--out", synth_out, "Output dataset root")->required();
    synth_cmd->add_option("--classes", synth_cfg.n_classes, "Number of (color, shape) classes");
    synth_cmd->add_option("--images-per-class", synth_cfg.images_per_class, "Static images per class");
    synth_cmd->add_option("--canvas", synth_cfg.canvas, "Image side in pixels");
    synth_cmd->add_option("--distractors", synth_cfg.max_distractors, "Maximum distractor shapes per image");
    synth_cmd->add_option("--instances", synth_cfg.max_instances, "Maximum instances of the image's class");
    synth_cmd->add_flag("--video", synth_cfg.video, "Emit frame sequences instead of still images");
    synth_cmd->add_option("--sequences-per-class", synth_cfg.sequences_per_class, "Video sequences per class");
    synth_cmd->add_option("--frames", synth_cfg.frames_per_sequence, "Frames per sequence");
    synth_cmd->add_option("--max-shift", synth_cfg.max_shift, "Per-frame displacement bound in pixels");
    synth_cmd->add_option("--min-radius", synth_cfg.min_radius, "Smallest shape radius in pixels");
    synth_cmd->add_option("--max-radius", synth_cfg.max_radius, "Largest shape radius in pixels");
    synth_cmd->add_option("--embedding-dim", synth_cfg.embedding_dim, "Word-vector dimension");
    synth_cmd->add_option("--seed", synth_cfg.seed, "Random seed");
    synth_cmd->add_flag("--json", synth_json, "Print a JSON summary to stdout");

    Common dump_c;
    std::string dump_split = "meta-test";
    std::string dump_out;
    int dump_count = 10;
    int dump_size = 0;
    auto setup_dump = [&](CLI::App* cmd) {
        add_common(cmd, dump_c, false);
        cmd->add_option("--split", dump_split, "meta-train or meta-test")
            ->check(CLI::IsMember({"meta-train", "meta-test"}));
        cmd->add_option("--count", dump_count, "Number of episodes")->check(CLI::PositiveNumber);
        cmd->add_option("--size", dump_size, "Resize images to size×size (default: configured test size)");
        cmd->add_option("--out", dump_out, "Output directory")->required();
    };
    auto* dump_cmd = app.add_subcommand("dump-episodes", "Write sampled episodes as images, masks and a JSON-lines index");
    setup_dump(dump_cmd);
    auto* episodes_cmd = app.add_subcommand("episodes", "Episode tools");
    auto* episodes_dump = episodes_cmd->add_subcommand("dump", "Same as dump-episodes");
    episodes_cmd->require_subcommand(1);
    setup_dump(episodes_dump);

    Common train_c;
    std::string train_out;
    bool all_seeds = false;
    bool allow_partial = false;
    bool verbose = false;
    auto* train_cmd = app.add_subcommand("train", "Meta-train on a fold's training classes");
    add_common(train_cmd, train_c, true);
    train_cmd->add_option("--out", train_out, "Run directory")->required();
    train_cmd->add_flag("--all-seeds", all_seeds, "Train and evaluate every configured seed and aggregate");
    train_cmd->add_flag("--allow-partial", allow_partial, "Keep going when a seed fails (with --all-seeds)");
    train_cmd->add_flag("--verbose", verbose, "Echo JSON-lines log events to stderr");

    Common eval_c;
    std::string eval_ckpt;
    std::optional<int> eval_tasks;
    std::string eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "Meta-test a checkpoint on the fold's held-out classes");
    add_common(eval_cmd, eval_c, false);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
    eval_cmd->add_option("--tasks", eval_tasks, "Number of evaluation episodes");
    eval_cmd->add_option("--out", eval_out, "Write the metrics JSON here");

    Common att_c;
    std::string att_ckpt;
    std::string att_out;
    int att_count = 4;
    auto* att_cmd = app.add_subcommand("attention-maps", "Export gated co-attention maps of query images");
    add_common(att_cmd, att_c, false);
    att_cmd->add_option("--checkpoint", att_ckpt, "Model checkpoint")->required();
    att_cmd->add_option("--count", att_count, "Number of episodes")->check(CLI::PositiveNumber);
    att_cmd->add_option("--out", att_out, "Output directory")->required();

    std::vector<std::string> report_inputs;
    std::string report_out;
    bool report_json = false;
    auto* report_cmd = app.add_subcommand("report", "Aggregate per-run metrics into mean and 95% interval");
    report_cmd->add_option("inputs", report_inputs, "Metrics JSON files (eval output or run.json)")->required();
    report_cmd->add_option("--out", report_out, "Write the aggregate JSON here");
    report_cmd->add_flag("--json", report_json, "Print the JSON report to stdout");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kUserError;
    }

    try {
        if (synth_cmd->parsed())
            return cmd_synth(synth_cfg, synth_out, synth_json, out, err);
        if (dump_cmd->parsed() || episodes_dump->parsed()) {
            int size = dump_size;
            if (size <= 0) {
                const trainer::TrainConfig cfg = resolve(dump_c);
                size = cfg.test_size;
            }
            return cmd_dump(dump_c, dump_split, dump_count, size, dump_out, out, err);
        }
        if (train_cmd->parsed())
            return cmd_train(train_c, train_out, all_seeds, allow_partial, verbose, out, err);
        if (eval_cmd->parsed())
            return cmd_eval(eval_c, eval_ckpt, eval_tasks, eval_out, out, err);
        if (att_cmd->parsed())
            return cmd_attention(att_c, att_ckpt, att_count, att_out, out, err);
        if (report_cmd->parsed())
            return cmd_report(report_inputs, report_out, report_json, out, err);
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "error (io): " << e.what() << '\n';
        return kIoError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kUserError;
    }
    return kUserError;
}

int run(int argc, char** argv)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i)
        args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace fewshot::cli
