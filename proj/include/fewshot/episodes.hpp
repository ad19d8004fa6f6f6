#pragma once

// Fold splits, dataset manifests and episodic task sampling.
//
// Manifest root layout:
//   classes.txt                  class names, one per line; line i (1-based) is annotation id i
//   images/<stem>.png|.jpg       static images
//   annotations/<stem>.png       8-bit class ids (0 background, 255 ignore)
//   sequences.txt                (video) sequence directory names, one per line
//   images/<seq>/<frame>.*       (video) frames, ordered by file name
//   annotations/<seq>/<frame>.png

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/image.hpp"
#include "fewshot/rng.hpp"

namespace fewshot::episodes {

struct FoldSpec {
    int fold_id = 0;
    std::vector<std::string> test_classes;
    std::vector<std::string> train_classes;

    bool is_test_class(std::string_view name) const;
};

/// Alphabetical order used to assign classes to folds.
std::vector<std::string> canonical_order(std::vector<std::string> classes);

/// Fold i tests on the contiguous slice [i*per_fold, (i+1)*per_fold) of `classes`
/// and trains on the rest. Throws BadPartition unless n_folds*per_fold == |classes|.
std::vector<FoldSpec> make_folds(const std::vector<std::string>& classes, int n_folds, int per_fold);

struct ImageRecord {
    std::filesystem::path image;
    std::filesystem::path annotation;
    int sequence = -1;         // index into sequences, -1 for static images
    std::vector<int> classes;  // 0-based class indices present in the annotation
};

struct Sequence {
    std::string name;
    std::vector<int> frames;   // record indices in temporal order
    std::vector<int> classes;  // union over frames
};

class DatasetManifest {
public:
    /// Scans and validates the layout eagerly; every referenced file must exist.
    static DatasetManifest load(const std::filesystem::path& root);

    const std::filesystem::path& root() const { return root_; }
    const std::vector<std::string>& classes() const { return classes_; }
    const std::vector<ImageRecord>& records() const { return records_; }
    const std::vector<Sequence>& sequences() const { return sequences_; }
    bool is_video() const { return !sequences_.empty(); }

    /// 0-based index of a class name; throws UnknownClass.
    int class_index(std::string_view name) const;
    /// Annotation id of a class (index + 1).
    static std::uint8_t annotation_id(int class_index) { return static_cast<std::uint8_t>(class_index + 1); }

    image::Image load_image(int record) const;
    image::LabelMap load_annotation(int record) const;
    /// Records whose annotation contains the class.
    std::vector<int> records_with(int class_index) const;

private:
    std::filesystem::path root_;
    std::vector<std::string> classes_;
    std::vector<ImageRecord> records_;
    std::vector<Sequence> sequences_;
};

/// Pixel = 1 iff its annotation id is the class; ignore pixels stay kIgnore.
/// Every instance of the class is foreground. Throws UnknownClass for ids outside 1..254.
image::Mask build_binary_mask(const image::LabelMap& annotation, std::uint8_t class_id);

enum class EpisodeMode { Static, TosflInstance, TosflCategory };
enum class Split { MetaTrain, MetaTest };

std::string_view to_string(EpisodeMode m);
EpisodeMode parse_mode(std::string_view text);
std::string_view to_string(Split s);

struct Episode {
    std::uint64_t index = 0;
    EpisodeMode mode = EpisodeMode::Static;
    int class_index = -1;
    std::string label;                // Y^s, shared by every support
    std::vector<int> support_records;
    std::vector<int> query_records;
    int support_sequence = -1;        // video modes
    int query_sequence = -1;

    int shots() const { return static_cast<int>(support_records.size()); }
};

struct SamplerConfig {
    EpisodeMode mode = EpisodeMode::Static;
    Split split = Split::MetaTrain;
    int shots = 1;    // k
    int queries = 1;  // l
};

/// Meta-train episodes skip images (and sequences) that contain any held-out class.
/// Episode `i` depends only on (seed, i), so independent workers can sample
/// disjoint index ranges of one stream.
class EpisodeSampler {
public:
    EpisodeSampler(const DatasetManifest& manifest, FoldSpec fold, SamplerConfig config, std::uint64_t seed);

    Episode sample(std::uint64_t index) const;
    Episode next() { return sample(cursor_++); }

    const std::vector<int>& split_classes() const { return split_classes_; }
    const FoldSpec& fold() const { return fold_; }
    const SamplerConfig& config() const { return config_; }

private:
    const DatasetManifest* manifest_;
    FoldSpec fold_;
    SamplerConfig config_;
    std::uint64_t seed_;
    std::uint64_t cursor_ = 0;
    std::vector<int> split_classes_;
    std::vector<std::vector<int>> candidates_;  // per split class: records (static) or sequences (video)
};

struct AugmentOptions {
    double flip_probability = 0.5;
    double min_scale = 0.8;
    double max_scale = 1.0;
    int size = 321;
};

struct LabelledImage {
    image::Image image;
    image::Mask mask;
};

/// Random horizontal flip (image and mask together), then a centered crop at a
/// scale drawn from [min_scale, max_scale], resized to size×size.
LabelledImage augment(LabelledImage item, Rng& rng, const AugmentOptions& options);

/// Pixels of one episode, resized to a square input resolution.
struct EpisodeData {
    std::string label;
    std::vector<image::Image> support_images;
    std::vector<image::Mask> support_masks;  // analysis only; never shown to the model
    std::vector<image::Image> query_images;
    std::vector<image::Mask> query_masks;
};

struct MaterializeOptions {
    int size = 321;
    bool augment_support = false;
    AugmentOptions augment;
    std::uint64_t augment_seed = 0;
};

EpisodeData materialize(const DatasetManifest& manifest, const Episode& episode, const MaterializeOptions& options);

}  // namespace fewshot::episodes
