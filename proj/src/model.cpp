#include "fewshot/model.hpp"

#include <algorithm>
#include <cmath>

#include "fewshot/archive.hpp"
#include "fewshot/error.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/semantics.hpp"

namespace fewshot::model {

using coattention::Variant;

std::string_view to_string(InteractionMode m)
{
    switch (m) {
    case InteractionMode::Cond: return "cond";
    case InteractionMode::CoAtt: return "coatt";
    case InteractionMode::SCoAtt: return "scoatt";
    }
    return "?";
}

InteractionMode parse_interaction(std::string_view text)
{
    if (text == "cond")
        return InteractionMode::Cond;
    if (text == "coatt")
        return InteractionMode::CoAtt;
    if (text == "scoatt")
        return InteractionMode::SCoAtt;
    fail(ErrorKind::InvalidArgument, "unknown interaction '" + std::string(text) + "' (expected cond, coatt or scoatt)");
}

std::string_view to_string(EncoderKind k)
{
    return k == EncoderKind::TinyTestCnn ? "tiny-test-cnn" : "pretrained-backbone";
}

EncoderKind parse_encoder(std::string_view text)
{
    if (text == "tiny-test-cnn" || text == "tiny")
        return EncoderKind::TinyTestCnn;
    if (text == "pretrained-backbone" || text == "backbone")
        return EncoderKind::PretrainedBackbone;
    fail(ErrorKind::InvalidArgument, "unknown encoder '" + std::string(text) + "'");
}

void ModelConfig::validate()
{
    if (variant == Variant::Semantic)
        interaction = InteractionMode::Cond;
    require(encoder_width >= 1 && encoder_channels >= 1, ErrorKind::InvalidArgument, "encoder sizes must be positive");
    require(embedding_dim >= 1 && semantic_dim >= 1, ErrorKind::InvalidArgument, "embedding sizes must be positive");
    require(feature_norm >= 0.0, ErrorKind::InvalidArgument, "feature_norm must be nonnegative");
    require(stack_depth >= 1, ErrorKind::InvalidArgument, "stack depth must be at least 1");
    require(decoder_channels >= 1 && decoder_iterations >= 1, ErrorKind::InvalidArgument,
            "decoder sizes must be positive");
    if (encoder == EncoderKind::PretrainedBackbone)
        require(!encoder_weights.empty(), ErrorKind::InvalidArgument, "pretrained backbone needs encoder_weights");
}

nlohmann::json ModelConfig::to_json() const
{
    return {
        {"variant", to_string(variant)},
        {"interaction", to_string(interaction)},
        {"encoder", to_string(encoder)},
        {"encoder_weights", encoder_weights},
        {"encoder_width", encoder_width},
        {"encoder_channels", encoder_channels},
        {"feature_norm", feature_norm},
        {"embedding_dim", embedding_dim},
        {"semantic_dim", semantic_dim},
        {"semantic_relu", semantic_relu},
        {"stack_depth", stack_depth},
        {"share_stack_weights", share_stack_weights},
        {"shared_gate", shared_gate},
        {"decoder_channels", decoder_channels},
        {"decoder_iterations", decoder_iterations},
        {"init_seed", init_seed},
    };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j)
{
    ModelConfig c;
    try {
        c.variant = coattention::parse_variant(j.at("variant").get<std::string>());
        c.interaction = parse_interaction(j.at("interaction").get<std::string>());
        c.encoder = parse_encoder(j.at("encoder").get<std::string>());
        c.encoder_weights = j.at("encoder_weights").get<std::string>();
        c.encoder_width = j.at("encoder_width").get<int>();
        c.encoder_channels = j.at("encoder_channels").get<int>();
        c.feature_norm = j.at("feature_norm").get<double>();
        c.embedding_dim = j.at("embedding_dim").get<int>();
        c.semantic_dim = j.at("semantic_dim").get<int>();
        c.semantic_relu = j.at("semantic_relu").get<bool>();
        c.stack_depth = j.at("stack_depth").get<int>();
        c.share_stack_weights = j.at("share_stack_weights").get<bool>();
        c.shared_gate = j.at("shared_gate").get<bool>();
        c.decoder_channels = j.at("decoder_channels").get<int>();
        c.decoder_iterations = j.at("decoder_iterations").get<int>();
        c.init_seed = j.at("init_seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ConfigMismatch, std::string("malformed model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------- encoder

namespace {

void he_normal(Tensor& w, Rng& rng)
{
    std::size_t fan_in = 1;
    for (int i = 1; i < w.rank(); ++i)
        fan_in *= static_cast<std::size_t>(w.dim(i));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w.values())
        v = sd * rng.normal();
}

Tensor identity_with_noise(int n, double noise, Rng& rng)
{
    Tensor t(Shape{n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            t.at(i, j) = (i == j ? 1.0 : 0.0) + noise * rng.normal();
    return t;
}

}  // namespace

int Encoder::channels() const
{
    return layers_.back().weight.value.dim(0);
}

int Encoder::stride() const
{
    int s = 1;
    for (const auto& l : layers_)
        s *= l.spec.stride;
    return s;
}

Tensor Encoder::encode(const Tensor& image) const
{
    require(image.rank() == 3 && image.dim(0) == 3, ErrorKind::InvalidImage,
            "encoder expects a (3,H,W) RGB image, got " + shape_string(image.shape()));
    require(image.dim(1) >= stride() && image.dim(2) >= stride(), ErrorKind::InvalidImage,
            "image " + shape_string(image.shape()) + " is smaller than the encoder stride");
    ag::NoGradGuard guard;
    Tensor normalized = image;
    const int hw = image.dim(1) * image.dim(2);
    for (int c = 0; c < 3; ++c)
        for (int s = 0; s < hw; ++s) {
            double& v = normalized[static_cast<std::size_t>(c) * hw + s];
            v = (v - mean_[c]) / std_[c];
        }
    ag::Var x = ag::constant(std::move(normalized));
    for (const auto& layer : layers_) {
        const ag::Var bias = layer.bias.value.empty() ? ag::Var{} : ag::constant(layer.bias.value);
        x = ag::conv2d(x, ag::constant(layer.weight.value), bias, layer.spec);
        if (layer.relu)
            x = ag::relu(x);
    }
    return x.value();
}

std::vector<Parameter*> Encoder::parameters()
{
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
        out.push_back(&l.weight);
        if (!l.bias.value.empty())
            out.push_back(&l.bias);
    }
    return out;
}

Encoder Encoder::tiny(int width, int channels, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, 0xe5c0de));
    Encoder e;
    const int mid = std::max(width, std::min(2 * width, channels));
    const int widths[4][2] = {{3, width}, {width, mid}, {mid, channels}, {channels, channels}};
    const int strides[4] = {2, 2, 2, 1};
    for (int i = 0; i < 4; ++i) {
        Layer l;
        l.weight = {"encoder.layer" + std::to_string(i) + ".weight", Tensor(Shape{widths[i][1], widths[i][0], 3, 3}),
                    false};
        Tensor& w = l.weight.value;
        he_normal(w, rng);
        // Channels 0..5 carry the local mean colour split into positive and
        // negative parts so that colour stays linearly readable after ReLU.
        const int in = widths[i][0];
        const int pass = std::min({6, widths[i][1], i == 0 ? 6 : in});
        for (int o = 0; o < pass; ++o) {
            double* kernel = w.data() + static_cast<std::size_t>(o) * in * 9;
            std::fill(kernel, kernel + in * 9, 0.0);
            const int src = i == 0 ? o / 2 : o;
            const double sign = i == 0 && o % 2 == 1 ? -1.0 : 1.0;
            if (i == 0)
                std::fill(kernel + src * 9, kernel + src * 9 + 9, sign / 9.0);
            else
                kernel[src * 9 + 4] = 1.0;
        }
        l.bias = {"encoder.layer" + std::to_string(i) + ".bias", Tensor(), false};
        l.spec = {strides[i], 1, 1};
        l.relu = i < 3;
        e.layers_.push_back(std::move(l));
    }
    return e;
}

Encoder Encoder::from_archive(const std::filesystem::path& path)
{
    const archive::Archive a = archive::read(path);
    Encoder e;
    const auto& layers = a.metadata.at("layers");
    require(!layers.empty(), ErrorKind::Io, "backbone archive " + path.string() + " has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string base = "layer" + std::to_string(i);
        const Tensor* w = a.find(base + ".weight");
        require(w && w->rank() == 4, ErrorKind::Io, "backbone archive misses " + base + ".weight");
        Layer l;
        l.weight = {"encoder." + base + ".weight", *w, false};
        const Tensor* b = a.find(base + ".bias");
        l.bias = {"encoder." + base + ".bias", b ? *b : Tensor(), false};
        l.spec.stride = layers[i].value("stride", 1);
        l.spec.padding = layers[i].value("padding", 0);
        l.spec.dilation = layers[i].value("dilation", 1);
        l.relu = layers[i].value("relu", true);
        if (i > 0)
            require(w->dim(1) == e.layers_.back().weight.value.dim(0), ErrorKind::Io,
                    "backbone layer " + std::to_string(i) + " input channels do not chain");
        e.layers_.push_back(std::move(l));
    }
    if (a.metadata.contains("mean"))
        for (int c = 0; c < 3; ++c)
            e.mean_[c] = a.metadata["mean"][static_cast<std::size_t>(c)].get<double>();
    if (a.metadata.contains("std"))
        for (int c = 0; c < 3; ++c)
            e.std_[c] = a.metadata["std"][static_cast<std::size_t>(c)].get<double>();
    return e;
}

// ------------------------------------------------------------------ model

Model::Model(ModelConfig config) : config_(std::move(config))
{
    config_.validate();
    encoder_ = config_.encoder == EncoderKind::TinyTestCnn
                   ? Encoder::tiny(config_.encoder_width, config_.encoder_channels, config_.init_seed)
                   : Encoder::from_archive(config_.encoder_weights);
    init_parameters();
}

Parameter& Model::add(std::string name, Shape shape, bool trainable)
{
    params_.push_back(std::make_unique<Parameter>(Parameter{std::move(name), Tensor(std::move(shape)), trainable}));
    return *params_.back();
}

int Model::decoder_input_channels() const
{
    const int c = feature_channels();
    switch (config_.interaction) {
    case InteractionMode::SCoAtt:
    case InteractionMode::Cond: return c;
    case InteractionMode::CoAtt: return coattention::output_channels(config_.variant, c, config_.semantic_dim);
    }
    return c;
}

void Model::init_parameters()
{
    Rng rng(derive_seed(config_.init_seed, 0x5eed));
    const int c = feature_channels();
    const int d = config_.semantic_dim;
    const int dd = config_.decoder_channels;
    const Variant variant = config_.variant;
    const int cc = coattention::conditioned_channels(variant, c, d);
    const int block_out = coattention::output_channels(variant, c, d);

    if (config_.uses_semantics()) {
        Parameter& w = add("semantic.proj.weight", Shape{d, config_.embedding_dim});
        const double sd = 1.0 / std::sqrt(static_cast<double>(config_.embedding_dim));
        for (double& v : w.value.values())
            v = sd * rng.normal();
        add("semantic.proj.bias", Shape{d});
    }

    auto add_block = [&](const std::string& prefix) {
        add(prefix + ".w_co", Shape{cc, cc}).value = identity_with_noise(cc, 0.01, rng);
        add(prefix + ".gate.weight", Shape{cc, cc});
        add(prefix + ".gate.bias", Shape{cc});
        if (!config_.shared_gate) {
            add(prefix + ".support_gate.weight", Shape{cc, cc});
            add(prefix + ".support_gate.bias", Shape{cc});
        }
    };
    auto add_conv = [&](const std::string& name, Shape shape) {
        he_normal(add(name + ".weight", shape).value, rng);
        add(name + ".bias", Shape{shape[0]});
    };

    switch (config_.interaction) {
    case InteractionMode::SCoAtt: {
        const int stages = config_.share_stack_weights ? 1 : config_.stack_depth;
        for (int i = 0; i < stages; ++i) {
            const std::string p = "stage" + std::to_string(i);
            add_block(p);
            add_conv(p + ".reduce_q", Shape{c, block_out});
            add_conv(p + ".reduce_s", Shape{c, block_out});
            add_conv(p + ".phi_q", Shape{c, c});
            add_conv(p + ".phi_s", Shape{c, c});
        }
        break;
    }
    case InteractionMode::CoAtt:
        add_block("block");
        break;
    case InteractionMode::Cond:
        if (variant == Variant::Semantic)
            add_conv("block.fuse", Shape{c, c + d});
        else
            add_conv("cond.fuse", Shape{c, 2 * c + (variant == Variant::VisualSemantic ? d : 0)});
        break;
    }

    add_conv("decoder.input", Shape{dd, decoder_input_channels()});
    add_conv("decoder.merge", Shape{dd, dd + 2});
    add_conv("decoder.res1", Shape{dd, dd, 3, 3});
    add_conv("decoder.res2", Shape{dd, dd, 3, 3});
    add_conv("decoder.head", Shape{2, dd});
    add_conv("decoder.aspp0", Shape{dd, dd});
    add_conv("decoder.aspp1", Shape{dd, dd, 3, 3});
    add_conv("decoder.aspp2", Shape{dd, dd, 3, 3});
    add_conv("decoder.aspp_pool", Shape{dd, dd});
    add_conv("decoder.aspp_project", Shape{dd, 4 * dd});
    add_conv("decoder.classifier", Shape{2, dd});
}

std::vector<Parameter*> Model::parameters()
{
    std::vector<Parameter*> out = encoder_.parameters();
    for (auto& p : params_)
        out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> Model::parameters() const
{
    auto mutable_self = const_cast<Model*>(this);
    auto all = mutable_self->parameters();
    return {all.begin(), all.end()};
}

std::vector<Parameter*> Model::trainable_parameters()
{
    std::vector<Parameter*> out;
    for (Parameter* p : parameters())
        if (p->trainable)
            out.push_back(p);
    return out;
}

Parameter& Model::parameter(std::string_view name)
{
    for (Parameter* p : parameters())
        if (p->name == name)
            return *p;
    fail(ErrorKind::InvalidArgument, "model has no parameter '" + std::string(name) + "'");
}

const Parameter& Model::parameter(std::string_view name) const
{
    return const_cast<Model*>(this)->parameter(name);
}

ag::Var Model::bound(std::string_view name) const
{
    for (const auto& p : params_)
        if (p->name == name)
            return ag::bind(*p);
    fail(ErrorKind::InvalidArgument, "model has no parameter '" + std::string(name) + "'");
}

coattention::BlockWeights Model::bind_block(const std::string& prefix) const
{
    coattention::BlockWeights w;
    if (config_.variant == Variant::Semantic) {
        w.fuse_w = bound(prefix + ".fuse.weight");
        w.fuse_b = bound(prefix + ".fuse.bias");
        return w;
    }
    w.w_co = bound(prefix + ".w_co");
    w.gate_w = bound(prefix + ".gate.weight");
    w.gate_b = bound(prefix + ".gate.bias");
    if (!config_.shared_gate) {
        w.support_gate_w = bound(prefix + ".support_gate.weight");
        w.support_gate_b = bound(prefix + ".support_gate.bias");
    }
    return w;
}

stacker::StageWeights Model::bind_stage(int stage) const
{
    require(config_.interaction == InteractionMode::SCoAtt, ErrorKind::InvalidArgument, "model is not stacked");
    require(stage >= 0 && stage < config_.stack_depth, ErrorKind::InvalidArgument, "stage index out of range");
    const std::string p = "stage" + std::to_string(config_.share_stack_weights ? 0 : stage);
    stacker::StageWeights s;
    s.block = bind_block(p);
    s.reduce_q_w = bound(p + ".reduce_q.weight");
    s.reduce_q_b = bound(p + ".reduce_q.bias");
    s.reduce_s_w = bound(p + ".reduce_s.weight");
    s.reduce_s_b = bound(p + ".reduce_s.bias");
    s.phi_q_w = bound(p + ".phi_q.weight");
    s.phi_q_b = bound(p + ".phi_q.bias");
    s.phi_s_w = bound(p + ".phi_s.weight");
    s.phi_s_b = bound(p + ".phi_s.bias");
    return s;
}

Tensor Model::encode(const Tensor& image) const
{
    Tensor f = encoder_.encode(image);
    if (config_.feature_norm > 0.0) {
        const int c = f.dim(0);
        const std::size_t plane = static_cast<std::size_t>(f.dim(1)) * f.dim(2);
        for (std::size_t i = 0; i < plane; ++i) {
            double norm = 0.0;
            for (int ch = 0; ch < c; ++ch)
                norm += f[ch * plane + i] * f[ch * plane + i];
            norm = std::sqrt(norm);
            if (norm > 1e-12)
                for (int ch = 0; ch < c; ++ch)
                    f[ch * plane + i] *= config_.feature_norm / norm;
        }
    }
    return f;
}

ag::Var Model::semantic_vector(std::span<const double> embedding) const
{
    if (!config_.uses_semantics())
        return {};
    require(embedding.size() == static_cast<std::size_t>(config_.embedding_dim), ErrorKind::DimensionMismatch,
            "label embedding has " + std::to_string(embedding.size()) + " values, model expects " +
                std::to_string(config_.embedding_dim));
    const ag::Var e = ag::constant(Tensor(Shape{config_.embedding_dim}, {embedding.begin(), embedding.end()}));
    return semantics::project(e, bound("semantic.proj.weight"), bound("semantic.proj.bias"), config_.semantic_relu);
}

InteractionOutput Model::interact(const ag::Var& query, std::span<const ag::Var> supports, const ag::Var& z) const
{
    require(!supports.empty(), ErrorKind::EmptySupport, "episode has no support images");
    InteractionOutput out;
    switch (config_.interaction) {
    case InteractionMode::SCoAtt: {
        std::vector<stacker::StageWeights> stages;
        for (int i = 0; i < config_.stack_depth; ++i)
            stages.push_back(bind_stage(i));
        stacker::StackResult r = stacker::stack_forward(query, supports, z, stages, config_.variant);
        out.features = r.query;
        out.query_gates = std::move(r.query_gates);
        break;
    }
    case InteractionMode::CoAtt: {
        coattention::Interaction r = coattention::interact(query, supports, z, bind_block("block"), config_.variant);
        out.features = r.query;
        out.query_gates.push_back(r.query_gate);
        break;
    }
    case InteractionMode::Cond: {
        if (config_.variant == Variant::Semantic) {
            out.features = coattention::interact(query, supports, z, bind_block("block"), config_.variant).query;
            break;
        }
        for (const ag::Var& s : supports)
            require(s.shape() == query.shape(), ErrorKind::ShapeMismatch, "support and query features differ in shape");
        std::vector<ag::Var> pooled;
        for (const ag::Var& s : supports)
            pooled.push_back(ag::global_avg_pool(s));
        const ag::Var support_code = ag::tile_spatial(ag::mean(pooled), query.dim(1), query.dim(2));
        ag::Var cat = config_.variant == Variant::VisualSemantic ? ag::concat({semantics::tile_and_concat(query, z), support_code})
                                                                 : ag::concat({query, support_code});
        out.features = ag::relu(ag::conv1x1(cat, bound("cond.fuse.weight"), bound("cond.fuse.bias")));
        break;
    }
    }
    return out;
}

SegmentationOutput Model::decode(const ag::Var& features, int height, int width, const ag::Var& initial_probability) const
{
    require(features.defined() && features.value().rank() == 3, ErrorKind::ShapeMismatch, "decoder expects (C,h,w)");
    require(features.dim(0) == decoder_input_channels(), ErrorKind::ShapeMismatch,
            "decoder expects " + std::to_string(decoder_input_channels()) + " channels, got " +
                shape_string(features.shape()));
    const int h = features.dim(1);
    const int w = features.dim(2);
    auto conv = [&](const ag::Var& x, const std::string& name, ag::ConvSpec spec = {}) {
        return ag::conv2d(x, bound(name + ".weight"), bound(name + ".bias"), spec);
    };
    auto pointwise = [&](const ag::Var& x, const std::string& name) {
        return ag::conv1x1(x, bound(name + ".weight"), bound(name + ".bias"));
    };

    const ag::Var x = ag::relu(pointwise(features, "decoder.input"));
    ag::Var prob = initial_probability;
    if (prob.defined())
        require(prob.shape() == Shape{2, h, w}, ErrorKind::ShapeMismatch,
                "initial probability map must be (2," + std::to_string(h) + "," + std::to_string(w) + ")");
    else
        prob = ag::constant(Tensor(Shape{2, h, w}));

    ag::Var refined;
    for (int r = 0; r < config_.decoder_iterations; ++r) {
        const ag::Var merged = ag::add(x, ag::relu(pointwise(ag::concat({x, prob}), "decoder.merge")));
        const ag::Var inner = ag::relu(conv(merged, "decoder.res1", {1, 1, 1}));
        refined = ag::relu(ag::add(merged, conv(inner, "decoder.res2", {1, 1, 1})));
        if (r + 1 < config_.decoder_iterations)
            prob = ag::softmax_channels(pointwise(refined, "decoder.head"));
    }

    const ag::Var a0 = ag::relu(pointwise(refined, "decoder.aspp0"));
    const ag::Var a1 = ag::relu(conv(refined, "decoder.aspp1", {1, 2, 2}));
    const ag::Var a2 = ag::relu(conv(refined, "decoder.aspp2", {1, 4, 4}));
    const ag::Var pooled = ag::relu(ag::linear(bound("decoder.aspp_pool.weight"), ag::global_avg_pool(refined),
                                               bound("decoder.aspp_pool.bias")));
    const ag::Var a3 = ag::tile_spatial(pooled, h, w);
    const ag::Var y = ag::relu(pointwise(ag::concat({a0, a1, a2, a3}), "decoder.aspp_project"));
    const ag::Var coarse = pointwise(y, "decoder.classifier");

    SegmentationOutput out;
    out.logits = ag::resize_bilinear(coarse, height, width);
    {
        ag::NoGradGuard guard;
        out.probability = ag::softmax_channels(ag::constant(out.logits.value())).value();
    }
    return out;
}

EpisodeForward Model::forward(const TaskInput& task) const
{
    require(!task.support_images.empty(), ErrorKind::EmptySupport, "episode has no support images");
    require(!task.query_images.empty(), ErrorKind::InvalidArgument, "episode has no query images");
    std::vector<ag::Var> supports;
    for (const Tensor& img : task.support_images)
        supports.push_back(ag::constant(encode(img)));
    const ag::Var z = semantic_vector(task.label_embedding);

    EpisodeForward out;
    for (const Tensor& img : task.query_images) {
        const ag::Var q = ag::constant(encode(img));
        InteractionOutput inter = interact(q, supports, z);
        out.outputs.push_back(decode(inter.features, img.dim(1), img.dim(2)));
        out.query_gates.push_back(std::move(inter.query_gates));
    }
    return out;
}

void Model::save(const std::filesystem::path& path) const
{
    archive::Archive a;
    a.metadata = {{"format", "fewshot-checkpoint"}, {"version", 1}, {"model_config", config_.to_json()}};
    for (const Parameter* p : parameters())
        a.tensors.push_back({p->name, p->value});
    archive::write(path, a);
}

namespace {

void copy_weights(Model& m, const archive::Archive& a, const std::filesystem::path& path)
{
    for (Parameter* p : m.parameters()) {
        const Tensor* t = a.find(p->name);
        require(t != nullptr, ErrorKind::ConfigMismatch, "checkpoint " + path.string() + " lacks " + p->name);
        require(t->same_shape(p->value), ErrorKind::ConfigMismatch,
                "checkpoint tensor " + p->name + " has shape " + shape_string(t->shape()) + ", model expects " +
                    shape_string(p->value.shape()));
        p->value = *t;
    }
}

}  // namespace

Model Model::load(const std::filesystem::path& path)
{
    const archive::Archive a = archive::read(path);
    require(a.metadata.value("format", "") == "fewshot-checkpoint", ErrorKind::Io,
            path.string() + " is not a model checkpoint");
    Model m(ModelConfig::from_json(a.metadata.at("model_config")));
    copy_weights(m, a, path);
    return m;
}

void Model::load_weights(const std::filesystem::path& path)
{
    const archive::Archive a = archive::read(path);
    require(a.metadata.value("format", "") == "fewshot-checkpoint", ErrorKind::Io,
            path.string() + " is not a model checkpoint");
    const ModelConfig saved = ModelConfig::from_json(a.metadata.at("model_config"));
    require(saved == config_, ErrorKind::ConfigMismatch,
            "checkpoint config " + saved.to_json().dump() + " differs from model config " + config_.to_json().dump());
    copy_weights(*this, a, path);
}

}  // namespace fewshot::model
