#pragma once

// Encoder -> multi-modal interaction -> decoder segmentation network.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fewshot/autograd.hpp"
#include "fewshot/coattention.hpp"
#include "fewshot/stacker.hpp"

namespace fewshot::model {

enum class InteractionMode {
    Cond,    // concatenation-based conditioning, no attention
    CoAtt,   // one co-attention block
    SCoAtt,  // stacked co-attention with residual stages
};

enum class EncoderKind {
    TinyTestCnn,         // 4-layer stride-8 CNN with seeded frozen weights
    PretrainedBackbone,  // plain conv stack loaded from a tensor archive
};

std::string_view to_string(InteractionMode m);
InteractionMode parse_interaction(std::string_view text);
std::string_view to_string(EncoderKind k);
EncoderKind parse_encoder(std::string_view text);

struct ModelConfig {
    coattention::Variant variant = coattention::Variant::VisualSemantic;
    InteractionMode interaction = InteractionMode::SCoAtt;
    EncoderKind encoder = EncoderKind::TinyTestCnn;
    std::string encoder_weights;  // archive path for PretrainedBackbone
    int encoder_width = 16;       // first tiny-encoder layer; later layers double up to encoder_channels
    int encoder_channels = 32;    // C for the tiny encoder
    double feature_norm = 0.0;    // > 0: encoder features rescaled to this L2 norm per location
    int embedding_dim = 300;      // E
    int semantic_dim = 256;       // d
    bool semantic_relu = false;
    int stack_depth = 2;          // N
    bool share_stack_weights = false;
    bool shared_gate = true;
    int decoder_channels = 256;
    int decoder_iterations = 3;   // R
    std::uint64_t init_seed = 0;

    /// Checks ranges; the semantic-only variant is forced to Cond.
    void validate();
    bool uses_semantics() const { return variant != coattention::Variant::Visual; }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

/// Frozen feature extractor: (3,H,W) image in [0,1] -> (C,H/stride,W/stride).
class Encoder {
public:
    struct Layer {
        Parameter weight;  // (O,I,k,k)
        Parameter bias;    // (O) or empty
        ag::ConvSpec spec;
        bool relu = true;
    };

    int channels() const;
    int stride() const;
    Tensor encode(const Tensor& image) const;
    std::vector<Parameter*> parameters();

    static Encoder tiny(int width, int channels, std::uint64_t seed);
    /// Layer tensors "layer<i>.weight" / "layer<i>.bias" plus metadata
    /// {"layers": [{"stride","padding","dilation","relu"}...], "mean": [3], "std": [3]}.
    static Encoder from_archive(const std::filesystem::path& path);

private:
    std::vector<Layer> layers_;
    double mean_[3] = {0.5, 0.5, 0.5};
    double std_[3] = {0.5, 0.5, 0.5};
};

/// Per-pixel two-class scores at image resolution.
struct SegmentationOutput {
    ag::Var logits;      // (2,H,W): background, foreground
    Tensor probability;  // softmax of logits over the two channels
};

struct TaskInput {
    std::vector<Tensor> support_images;   // (3,H,W) each, k >= 1
    std::vector<double> label_embedding;  // word vector of the support class (E)
    std::vector<Tensor> query_images;
};

struct InteractionOutput {
    ag::Var features;                  // input to the decoder
    std::vector<ag::Var> query_gates;  // gated-attention maps, one per block
};

struct EpisodeForward {
    std::vector<SegmentationOutput> outputs;             // one per query
    std::vector<std::vector<ag::Var>> query_gates;       // per query, per block
};

class Model {
public:
    explicit Model(ModelConfig config);
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const noexcept { return config_; }

    /// Every parameter in a fixed order (encoder first).
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    std::vector<Parameter*> trainable_parameters();
    Parameter& parameter(std::string_view name);
    const Parameter& parameter(std::string_view name) const;

    const Encoder& encoder() const { return encoder_; }
    int feature_channels() const { return encoder_.channels(); }
    int decoder_input_channels() const;

    Tensor encode(const Tensor& image) const;
    /// Projected label embedding z; undefined for the visual-only variant.
    ag::Var semantic_vector(std::span<const double> embedding) const;
    InteractionOutput interact(const ag::Var& query, std::span<const ag::Var> supports, const ag::Var& z) const;
    /// Runs the iterative refinement `decoder_iterations` times, starting from
    /// `initial_probability` (2,h,w) or from zeros, and upsamples to height×width.
    SegmentationOutput decode(const ag::Var& features, int height, int width,
                              const ag::Var& initial_probability = {}) const;
    EpisodeForward forward(const TaskInput& task) const;

    stacker::StageWeights bind_stage(int stage) const;
    coattention::BlockWeights bind_block(const std::string& prefix) const;

    void save(const std::filesystem::path& path) const;
    static Model load(const std::filesystem::path& path);
    /// Loads weights saved from a model with an identical configuration.
    void load_weights(const std::filesystem::path& path);

private:
    Parameter& add(std::string name, Shape shape, bool trainable = true);
    ag::Var bound(std::string_view name) const;
    void init_parameters();

    ModelConfig config_;
    Encoder encoder_;
    std::vector<std::unique_ptr<Parameter>> params_;
};

}  // namespace fewshot::model
