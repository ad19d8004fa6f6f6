#include "fewshot/episodes.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "fewshot/error.hpp"

namespace fewshot::episodes {

namespace fs = std::filesystem;

bool FoldSpec::is_test_class(std::string_view name) const
{
    return std::find(test_classes.begin(), test_classes.end(), name) != test_classes.end();
}

std::vector<std::string> canonical_order(std::vector<std::string> classes)
{
    std::sort(classes.begin(), classes.end());
    return classes;
}

std::vector<FoldSpec> make_folds(const std::vector<std::string>& classes, int n_folds, int per_fold)
{
    require(n_folds >= 1 && per_fold >= 1, ErrorKind::BadPartition, "folds and classes per fold must be positive");
    require(static_cast<std::size_t>(n_folds) * static_cast<std::size_t>(per_fold) == classes.size(),
            ErrorKind::BadPartition,
            std::to_string(n_folds) + " folds x " + std::to_string(per_fold) + " classes does not cover " +
                std::to_string(classes.size()) + " classes");
    std::set<std::string> unique(classes.begin(), classes.end());
    require(unique.size() == classes.size(), ErrorKind::BadPartition, "duplicate class names");

    std::vector<FoldSpec> folds;
    for (int f = 0; f < n_folds; ++f) {
        FoldSpec spec;
        spec.fold_id = f;
        for (int i = 0; i < static_cast<int>(classes.size()); ++i) {
            const bool test = i >= f * per_fold && i < (f + 1) * per_fold;
            (test ? spec.test_classes : spec.train_classes).push_back(classes[static_cast<std::size_t>(i)]);
        }
        folds.push_back(std::move(spec));
    }
    return folds;
}

// --------------------------------------------------------------- manifest

namespace {

std::vector<std::string> read_lines(const fs::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos)
            continue;
        const auto last = line.find_last_not_of(" \t");
        lines.push_back(line.substr(first, last - first + 1));
    }
    return lines;
}

bool is_image_file(const fs::path& p)
{
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_images(const fs::path& dir)
{
    require(fs::is_directory(dir), ErrorKind::Io, "missing directory " + dir.string());
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_image_file(entry.path()))
            out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> classes_present(const image::LabelMap& labels, int n_classes)
{
    std::vector<bool> seen(256, false);
    for (std::uint8_t v : labels.ids)
        seen[v] = true;
    std::vector<int> out;
    for (int c = 0; c < n_classes; ++c)
        if (seen[DatasetManifest::annotation_id(c)])
            out.push_back(c);
    return out;
}

}  // namespace

DatasetManifest DatasetManifest::load(const fs::path& root)
{
    DatasetManifest m;
    m.root_ = root;
    m.classes_ = read_lines(root / "classes.txt");
    require(!m.classes_.empty(), ErrorKind::Io, "classes.txt lists no classes");
    require(m.classes_.size() < 255, ErrorKind::Io, "at most 254 classes fit in 8-bit annotations");
    const int n = static_cast<int>(m.classes_.size());

    auto add_record = [&](const fs::path& image, const fs::path& annotation, int sequence) {
        require(fs::is_regular_file(annotation), ErrorKind::Io, "missing annotation " + annotation.string());
        ImageRecord r;
        r.image = image;
        r.annotation = annotation;
        r.sequence = sequence;
        r.classes = classes_present(image::read_labels(annotation), n);
        m.records_.push_back(std::move(r));
        return static_cast<int>(m.records_.size()) - 1;
    };

    if (fs::exists(root / "sequences.txt")) {
        for (const std::string& name : read_lines(root / "sequences.txt")) {
            Sequence seq;
            seq.name = name;
            const int seq_index = static_cast<int>(m.sequences_.size());
            for (const fs::path& frame : sorted_images(root / "images" / name)) {
                const int r = add_record(frame, root / "annotations" / name / (frame.stem().string() + ".png"), seq_index);
                seq.frames.push_back(r);
                for (int c : m.records_[static_cast<std::size_t>(r)].classes)
                    if (std::find(seq.classes.begin(), seq.classes.end(), c) == seq.classes.end())
                        seq.classes.push_back(c);
            }
            require(!seq.frames.empty(), ErrorKind::Io, "sequence " + name + " has no frames");
            std::sort(seq.classes.begin(), seq.classes.end());
            m.sequences_.push_back(std::move(seq));
        }
    } else {
        for (const fs::path& img : sorted_images(root / "images"))
            add_record(img, root / "annotations" / (img.stem().string() + ".png"), -1);
    }
    require(!m.records_.empty(), ErrorKind::Io, "dataset at " + root.string() + " has no images");
    return m;
}

int DatasetManifest::class_index(std::string_view name) const
{
    const auto it = std::find(classes_.begin(), classes_.end(), name);
    require(it != classes_.end(), ErrorKind::UnknownClass, "class '" + std::string(name) + "' is not in classes.txt");
    return static_cast<int>(it - classes_.begin());
}

image::Image DatasetManifest::load_image(int record) const
{
    return image::read_image(records_.at(static_cast<std::size_t>(record)).image);
}

image::LabelMap DatasetManifest::load_annotation(int record) const
{
    return image::read_labels(records_.at(static_cast<std::size_t>(record)).annotation);
}

std::vector<int> DatasetManifest::records_with(int class_index) const
{
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(records_.size()); ++i) {
        const auto& cls = records_[static_cast<std::size_t>(i)].classes;
        if (std::find(cls.begin(), cls.end(), class_index) != cls.end())
            out.push_back(i);
    }
    return out;
}

image::Mask build_binary_mask(const image::LabelMap& annotation, std::uint8_t class_id)
{
    require(class_id >= 1 && class_id < image::kIgnore, ErrorKind::UnknownClass,
            "class id " + std::to_string(class_id) + " is not a foreground class");
    image::Mask mask(annotation.width, annotation.height);
    for (std::size_t i = 0; i < annotation.ids.size(); ++i) {
        const std::uint8_t v = annotation.ids[i];
        mask.ids[i] = v == image::kIgnore ? image::kIgnore : (v == class_id ? 1 : 0);
    }
    return mask;
}

std::string_view to_string(EpisodeMode m)
{
    switch (m) {
    case EpisodeMode::Static: return "static";
    case EpisodeMode::TosflInstance: return "tosfl-instance";
    case EpisodeMode::TosflCategory: return "tosfl-category";
    }
    return "?";
}

EpisodeMode parse_mode(std::string_view text)
{
    if (text == "static")
        return EpisodeMode::Static;
    if (text == "tosfl-instance")
        return EpisodeMode::TosflInstance;
    if (text == "tosfl-category")
        return EpisodeMode::TosflCategory;
    fail(ErrorKind::InvalidArgument, "unknown mode '" + std::string(text) + "'");
}

std::string_view to_string(Split s)
{
    return s == Split::MetaTrain ? "meta-train" : "meta-test";
}

// ---------------------------------------------------------------- sampler

namespace {

bool frame_has(const DatasetManifest& m, int record, int cls)
{
    const auto& c = m.records()[static_cast<std::size_t>(record)].classes;
    return std::find(c.begin(), c.end(), cls) != c.end();
}

std::vector<int> frames_with(const DatasetManifest& m, const Sequence& seq, int cls)
{
    std::vector<int> out;
    for (int r : seq.frames)
        if (frame_has(m, r, cls))
            out.push_back(r);
    return out;
}

/// `count` distinct elements of `pool`, in draw order.
std::vector<int> choose(std::vector<int> pool, int count, Rng& rng)
{
    for (int i = 0; i < count; ++i) {
        const std::size_t j = static_cast<std::size_t>(i) + rng.below(pool.size() - static_cast<std::size_t>(i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    pool.resize(static_cast<std::size_t>(count));
    return pool;
}

}  // namespace

EpisodeSampler::EpisodeSampler(const DatasetManifest& manifest, FoldSpec fold, SamplerConfig config, std::uint64_t seed)
    : manifest_(&manifest), fold_(std::move(fold)), config_(config), seed_(seed)
{
    require(config_.shots >= 1, ErrorKind::EmptySupport, "episodes need at least one support image");
    require(config_.queries >= 1, ErrorKind::InvalidArgument, "episodes need at least one query image");
    const bool video = config_.mode != EpisodeMode::Static;
    require(video == manifest.is_video(), ErrorKind::InvalidArgument,
            std::string("mode ") + std::string(to_string(config_.mode)) +
                (video ? " needs a video dataset" : " needs a static image dataset"));

    const auto& names = config_.split == Split::MetaTrain ? fold_.train_classes : fold_.test_classes;
    require(!names.empty(), ErrorKind::InsufficientData, "split has no classes");

    // Meta-train episodes never show held-out classes, not even as background.
    std::vector<bool> held_out(manifest.classes().size(), false);
    if (config_.split == Split::MetaTrain)
        for (const std::string& name : fold_.test_classes)
            held_out[static_cast<std::size_t>(manifest.class_index(name))] = true;
    auto clean = [&](const std::vector<int>& classes) {
        return std::none_of(classes.begin(), classes.end(),
                            [&](int c) { return held_out[static_cast<std::size_t>(c)]; });
    };
    for (const std::string& name : names) {
        const int cls = manifest.class_index(name);
        std::vector<int> pool;
        switch (config_.mode) {
        case EpisodeMode::Static: {
            for (int r : manifest.records_with(cls))
                if (clean(manifest.records()[static_cast<std::size_t>(r)].classes))
                    pool.push_back(r);
            require(static_cast<int>(pool.size()) >= config_.shots + config_.queries, ErrorKind::InsufficientData,
                    "class '" + name + "' has " + std::to_string(pool.size()) + " images, need " +
                        std::to_string(config_.shots + config_.queries));
            break;
        }
        case EpisodeMode::TosflInstance: {
            for (int s = 0; s < static_cast<int>(manifest.sequences().size()); ++s) {
                const Sequence& seq = manifest.sequences()[static_cast<std::size_t>(s)];
                if (!clean(seq.classes))
                    continue;
                const int needed = config_.shots + config_.queries;
                if (static_cast<int>(seq.frames.size()) < needed)
                    continue;
                bool leading = true;
                for (int i = 0; i < config_.shots; ++i)
                    leading = leading && frame_has(manifest, seq.frames[static_cast<std::size_t>(i)], cls);
                if (leading)
                    pool.push_back(s);
            }
            require(!pool.empty(), ErrorKind::InsufficientData,
                    "class '" + name + "' has no sequence starting with it and long enough for the episode");
            break;
        }
        case EpisodeMode::TosflCategory: {
            for (int s = 0; s < static_cast<int>(manifest.sequences().size()); ++s) {
                const Sequence& seq = manifest.sequences()[static_cast<std::size_t>(s)];
                if (!clean(seq.classes))
                    continue;
                const int with = static_cast<int>(frames_with(manifest, seq, cls).size());
                if (with >= std::max(config_.shots, config_.queries))
                    pool.push_back(s);
            }
            require(pool.size() >= 2, ErrorKind::InsufficientData,
                    "class '" + name + "' needs frames in two different sequences");
            break;
        }
        }
        split_classes_.push_back(cls);
        candidates_.push_back(std::move(pool));
    }
}

Episode EpisodeSampler::sample(std::uint64_t index) const
{
    Rng rng(derive_seed(seed_, index));
    const std::size_t pick = rng.below(split_classes_.size());
    const int cls = split_classes_[pick];
    const std::vector<int>& pool = candidates_[pick];
    const DatasetManifest& m = *manifest_;

    Episode ep;
    ep.index = index;
    ep.mode = config_.mode;
    ep.class_index = cls;
    ep.label = m.classes()[static_cast<std::size_t>(cls)];

    switch (config_.mode) {
    case EpisodeMode::Static: {
        const std::vector<int> chosen = choose(pool, config_.shots + config_.queries, rng);
        ep.support_records.assign(chosen.begin(), chosen.begin() + config_.shots);
        ep.query_records.assign(chosen.begin() + config_.shots, chosen.end());
        break;
    }
    case EpisodeMode::TosflInstance: {
        const int s = pool[rng.below(pool.size())];
        const Sequence& seq = m.sequences()[static_cast<std::size_t>(s)];
        ep.support_sequence = ep.query_sequence = s;
        ep.support_records.assign(seq.frames.begin(), seq.frames.begin() + config_.shots);
        std::vector<int> rest(seq.frames.begin() + config_.shots, seq.frames.end());
        ep.query_records = choose(std::move(rest), config_.queries, rng);
        std::sort(ep.query_records.begin(), ep.query_records.end());
        break;
    }
    case EpisodeMode::TosflCategory: {
        const std::vector<int> pair = choose(pool, 2, rng);
        ep.support_sequence = pair[0];
        ep.query_sequence = pair[1];
        const Sequence& vs = m.sequences()[static_cast<std::size_t>(pair[0])];
        const Sequence& vq = m.sequences()[static_cast<std::size_t>(pair[1])];
        ep.support_records = choose(frames_with(m, vs, cls), config_.shots, rng);
        ep.query_records = choose(frames_with(m, vq, cls), config_.queries, rng);
        std::sort(ep.query_records.begin(), ep.query_records.end());
        break;
    }
    }
    return ep;
}

// ----------------------------------------------------------- augmentation

LabelledImage augment(LabelledImage item, Rng& rng, const AugmentOptions& options)
{
    require(item.image.width == item.mask.width && item.image.height == item.mask.height, ErrorKind::ShapeMismatch,
            "image and mask sizes differ");
    require(options.min_scale > 0.0 && options.min_scale <= options.max_scale && options.max_scale <= 1.0,
            ErrorKind::InvalidArgument, "crop scales must satisfy 0 < min <= max <= 1");
    if (rng.bernoulli(options.flip_probability)) {
        item.image = image::flip_horizontal(item.image);
        item.mask = image::flip_horizontal(item.mask);
    }
    const double scale = rng.uniform(options.min_scale, options.max_scale);
    if (scale < 1.0) {
        item.image = image::center_crop(item.image, scale);
        item.mask = image::center_crop(item.mask, scale);
    }
    item.image = image::resize_bilinear(item.image, options.size, options.size);
    item.mask = image::resize_nearest(item.mask, options.size, options.size);
    return item;
}

EpisodeData materialize(const DatasetManifest& manifest, const Episode& episode, const MaterializeOptions& options)
{
    require(options.size >= 1, ErrorKind::InvalidArgument, "input size must be positive");
    const std::uint8_t id = DatasetManifest::annotation_id(episode.class_index);
    EpisodeData data;
    data.label = episode.label;
    Rng rng(derive_seed(options.augment_seed, episode.index));
    for (int r : episode.support_records) {
        LabelledImage item{manifest.load_image(r), build_binary_mask(manifest.load_annotation(r), id)};
        require(item.image.width == item.mask.width && item.image.height == item.mask.height, ErrorKind::InvalidImage,
                "image and annotation sizes differ for " + manifest.records()[static_cast<std::size_t>(r)].image.string());
        if (options.augment_support) {
            AugmentOptions a = options.augment;
            a.size = options.size;
            item = augment(std::move(item), rng, a);
        } else {
            item.image = image::resize_bilinear(item.image, options.size, options.size);
            item.mask = image::resize_nearest(item.mask, options.size, options.size);
        }
        data.support_images.push_back(std::move(item.image));
        data.support_masks.push_back(std::move(item.mask));
    }
    for (int r : episode.query_records) {
        image::Image img = manifest.load_image(r);
        image::Mask mask = build_binary_mask(manifest.load_annotation(r), id);
        require(img.width == mask.width && img.height == mask.height, ErrorKind::InvalidImage,
                "image and annotation sizes differ for " + manifest.records()[static_cast<std::size_t>(r)].image.string());
        data.query_images.push_back(image::resize_bilinear(img, options.size, options.size));
        data.query_masks.push_back(image::resize_nearest(mask, options.size, options.size));
    }
    return data;
}

}  // namespace fewshot::episodes
