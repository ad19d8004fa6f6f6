#pragma once

// Synthetic colored-shapes datasets in the manifest layout.
//
// Each class is a (color, shape) combination such as "red circle". Every image
// holds one or more instances of its class plus distractor shapes of other
// classes drawn over a noisy background. Alongside the manifest the generator
// writes shapes.jsonl (the drawn shapes, in paint order, per image) and
// embeddings.txt (word vectors whose color words carry their RGB value).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fewshot/episodes.hpp"
#include "fewshot/image.hpp"
#include "fewshot/semantics.hpp"
#include "json.hpp"

namespace fewshot::synth {

enum class ShapeKind { Circle, Square, Triangle, Diamond, Cross };

std::string_view to_string(ShapeKind k);
ShapeKind parse_shape(std::string_view text);

struct ColorName {
    std::string name;
    std::uint8_t rgb[3];
};

const std::vector<ColorName>& palette();

struct ClassSpec {
    std::string name;  // "<color> <shape>"
    int color = 0;     // index into palette()
    ShapeKind shape = ShapeKind::Circle;
};

/// The first n (color, shape) combinations; colors and shapes are both
/// distinct for n up to 5.
std::vector<ClassSpec> class_specs(int n);

struct ShapeInstance {
    int class_index = 0;  // index into class_specs
    ShapeKind shape = ShapeKind::Circle;
    double cx = 0.0;
    double cy = 0.0;
    double radius = 1.0;
    std::uint8_t rgb[3] = {0, 0, 0};

    nlohmann::json to_json() const;
    static ShapeInstance from_json(const nlohmann::json& j);
};

/// True iff the pixel center (x+0.5, y+0.5) lies inside the shape.
bool covers(const ShapeInstance& s, int x, int y);

/// Paints the shapes in order; label of a pixel is class_index+1 of the last shape covering it.
image::LabelMap rasterize_labels(const std::vector<ShapeInstance>& shapes, int width, int height);

struct SynthConfig {
    int n_classes = 5;
    int images_per_class = 20;
    int canvas = 64;
    int max_distractors = 2;   // 0 disables distractors
    int max_instances = 2;     // instances of the image's own class (static mode)
    int max_shapes = 3;        // cap on instances plus distractors per image
    double min_radius = 12.0;
    double max_radius = 18.0;
    int color_jitter = 20;
    int background_noise = 12;
    bool video = false;
    int sequences_per_class = 4;
    int frames_per_sequence = 8;
    int max_shift = 5;         // per-frame displacement bound (pixels, Euclidean)
    int embedding_dim = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Word vectors for every palette color and shape word.
/// Color words carry their normalized RGB in dims 0..2; shape words are
/// seeded unit vectors over the remaining dims.
std::vector<semantics::WordEmbedding> grounded_embeddings(int dimension);

/// Writes the dataset under `root` and returns the loaded manifest.
episodes::DatasetManifest generate(const std::filesystem::path& root, const SynthConfig& config);

}  // namespace fewshot::synth
