#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <vector>

#include "fewshot/archive.hpp"
#include "fewshot/error.hpp"
#include "fewshot/model.hpp"
#include "support.hpp"

using namespace fewshot;
using namespace fewshot::testing;
using coattention::Variant;
using model::InteractionMode;
using model::Model;
using model::ModelConfig;

namespace {

ModelConfig small_config(Variant variant = Variant::VisualSemantic, InteractionMode mode = InteractionMode::SCoAtt)
{
    ModelConfig c;
    c.variant = variant;
    c.interaction = mode;
    c.encoder_width = 4;
    c.encoder_channels = 8;
    c.embedding_dim = 5;
    c.semantic_dim = 3;
    c.decoder_channels = 6;
    c.decoder_iterations = 2;
    c.init_seed = 3;
    c.validate();
    return c;
}

model::TaskInput random_task(int shots, int queries, int size, Rng& rng)
{
    model::TaskInput t;
    for (int i = 0; i < shots; ++i)
        t.support_images.push_back(random_tensor(Shape{3, size, size}, rng, 0.0, 1.0));
    for (int i = 0; i < queries; ++i)
        t.query_images.push_back(random_tensor(Shape{3, size, size}, rng, 0.0, 1.0));
    const Tensor e = random_tensor(Shape{5}, rng);
    t.label_embedding.assign(e.values().begin(), e.values().end());
    return t;
}

ErrorKind kind_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::Io;
}

bool same_parameters(const Model& a, const Model& b)
{
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    if (pa.size() != pb.size())
        return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i]->name != pb[i]->name || pa[i]->value.values().size() != pb[i]->value.values().size() ||
            !std::equal(pa[i]->value.values().begin(), pa[i]->value.values().end(), pb[i]->value.values().begin()))
            return false;
    return true;
}

}  // namespace

TEST(Encoder, StrideEightGrid)
{
    const auto e = model::Encoder::tiny(4, 8, 1);
    EXPECT_EQ(e.stride(), 8);
    EXPECT_EQ(e.channels(), 8);
    Rng rng(1);
    const Tensor f = e.encode(random_tensor(Shape{3, 32, 32}, rng, 0, 1));
    EXPECT_EQ(f.shape(), (Shape{8, 4, 4}));
}

TEST(Encoder, DeterministicAndLinearAtZero)
{
    const auto e = model::Encoder::tiny(4, 8, 2);
    Rng rng(2);
    const Tensor img = random_tensor(Shape{3, 24, 24}, rng, 0, 1);
    EXPECT_EQ(max_abs_diff(e.encode(img), e.encode(img)), 0.0);
    // mid-gray normalizes to zero input; the tiny encoder has no biases
    const Tensor f = e.encode(Tensor(Shape{3, 24, 24}, 0.5));
    for (double v : f.values())
        EXPECT_EQ(v, 0.0);
}

TEST(Encoder, ColourIsLinearlyReadable)
{
    // uniform colour images: channels 0..5 hold the positive and negative parts of the normalized colour
    const auto e = model::Encoder::tiny(8, 8, 4);
    Tensor img(Shape{3, 32, 32});
    const double rgb[3] = {0.9, 0.2, 0.5};
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 32 * 32; ++i)
            img[static_cast<std::size_t>(c) * 32 * 32 + i] = rgb[c];
    const Tensor f = e.encode(img);
    const std::size_t plane = 16;
    const std::size_t centre = 5;  // (1,1) lies away from the zero padding
    for (int c = 0; c < 3; ++c) {
        const double v = (rgb[c] - 0.5) / 0.5;
        EXPECT_NEAR(f[(2 * c) * plane + centre] - f[(2 * c + 1) * plane + centre], v, 1e-12);
    }
}

TEST(Encoder, RejectsBadImages)
{
    const auto e = model::Encoder::tiny(4, 8, 1);
    EXPECT_EQ(kind_of([&] { e.encode(Tensor(Shape{1, 16, 16})); }), ErrorKind::InvalidImage);
    EXPECT_EQ(kind_of([&] { e.encode(Tensor(Shape{3, 4, 4})); }), ErrorKind::InvalidImage);
}

TEST(Encoder, BackboneArchiveRoundTrip)
{
    const auto dir = scratch_dir("backbone");
    Rng rng(5);
    archive::Archive a;
    a.metadata = {{"layers", {{{"stride", 2}, {"padding", 1}, {"relu", true}}, {{"stride", 1}, {"padding", 0}, {"relu", false}}}},
                  {"mean", {0.0, 0.0, 0.0}},
                  {"std", {1.0, 1.0, 1.0}}};
    a.tensors.push_back({"layer0.weight", random_tensor(Shape{4, 3, 3, 3}, rng)});
    a.tensors.push_back({"layer0.bias", random_tensor(Shape{4}, rng)});
    a.tensors.push_back({"layer1.weight", random_tensor(Shape{5, 4, 1, 1}, rng)});
    archive::write(dir / "backbone.bin", a);
    const auto e = model::Encoder::from_archive(dir / "backbone.bin");
    EXPECT_EQ(e.channels(), 5);
    EXPECT_EQ(e.stride(), 2);
    EXPECT_EQ(e.encode(Tensor(Shape{3, 8, 8}, 0.3)).shape(), (Shape{5, 4, 4}));

    a.tensors[2].tensor = random_tensor(Shape{5, 3, 1, 1}, rng);
    archive::write(dir / "bad.bin", a);
    EXPECT_EQ(kind_of([&] { model::Encoder::from_archive(dir / "bad.bin"); }), ErrorKind::Io);
}

TEST(ModelConfig, JsonRoundTripAndValidation)
{
    ModelConfig c = small_config();
    c.feature_norm = 2.0;
    EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
    ModelConfig s = small_config(Variant::Semantic, InteractionMode::SCoAtt);
    EXPECT_EQ(s.interaction, InteractionMode::Cond);
    c.stack_depth = 0;
    EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::InvalidArgument);
    EXPECT_EQ(model::parse_interaction(model::to_string(InteractionMode::CoAtt)), InteractionMode::CoAtt);
}

TEST(Model, ProbabilitiesSumToOneAtImageResolution)
{
    Rng rng(6);
    const Model m(small_config());
    const auto task = random_task(1, 2, 24, rng);
    const auto out = m.forward(task);
    ASSERT_EQ(out.outputs.size(), 2u);
    for (const auto& o : out.outputs) {
        EXPECT_EQ(o.logits.shape(), (Shape{2, 24, 24}));
        const Tensor& p = o.probability;
        for (int i = 0; i < 24 * 24; ++i)
            EXPECT_NEAR(p[static_cast<std::size_t>(i)] + p[static_cast<std::size_t>(24 * 24 + i)], 1.0, 1e-12);
    }
}

TEST(Model, DuplicateQueriesGiveIdenticalOutputs)
{
    Rng rng(7);
    const Model m(small_config());
    auto task = random_task(2, 1, 16, rng);
    task.query_images.push_back(task.query_images[0]);
    const auto out = m.forward(task);
    EXPECT_EQ(max_abs_diff(out.outputs[0].logits.value(), out.outputs[1].logits.value()), 0.0);
}

TEST(Model, ForwardIsEncodeInteractDecode)
{
    Rng rng(8);
    ModelConfig c = small_config();
    c.stack_depth = 1;
    const Model m(c);
    const auto task = random_task(1, 1, 16, rng);
    const auto out = m.forward(task);
    const std::vector<ag::Var> s{ag::constant(m.encode(task.support_images[0]))};
    const auto inter = m.interact(ag::constant(m.encode(task.query_images[0])), s, m.semantic_vector(task.label_embedding));
    const auto manual = m.decode(inter.features, 16, 16);
    EXPECT_EQ(max_abs_diff(out.outputs[0].logits.value(), manual.logits.value()), 0.0);
}

TEST(Model, VariantsDiffer)
{
    Rng rng(9);
    const auto task = random_task(1, 1, 16, rng);
    const Model vs(small_config(Variant::VisualSemantic));
    const Model s(small_config(Variant::Semantic));
    const Model v(small_config(Variant::Visual));
    EXPECT_GT(max_abs_diff(vs.forward(task).outputs[0].probability, s.forward(task).outputs[0].probability), 1e-9);
    EXPECT_GT(max_abs_diff(vs.forward(task).outputs[0].probability, v.forward(task).outputs[0].probability), 1e-9);
    EXPECT_FALSE(v.semantic_vector(task.label_embedding).defined());
}

TEST(Model, AllInteractionModesRun)
{
    Rng rng(10);
    const auto task = random_task(2, 1, 16, rng);
    for (Variant variant : {Variant::VisualSemantic, Variant::Visual})
        for (InteractionMode mode : {InteractionMode::Cond, InteractionMode::CoAtt, InteractionMode::SCoAtt}) {
            const Model m(small_config(variant, mode));
            const auto out = m.forward(task);
            EXPECT_TRUE(out.outputs[0].logits.value().all_finite());
            const bool attention = mode != InteractionMode::Cond;
            EXPECT_EQ(!out.query_gates[0].empty(), attention);
        }
}

TEST(Model, DecoderIterationsChangeThePrediction)
{
    Rng rng(11);
    ModelConfig one = small_config();
    one.decoder_iterations = 1;
    ModelConfig two = small_config();
    two.decoder_iterations = 2;
    const Model a(one);
    const Model b(two);
    const ag::Var features = ag::constant(random_tensor(Shape{a.decoder_input_channels(), 3, 3}, rng, 0, 2));
    const Tensor pa = a.decode(features, 12, 12).probability;
    const Tensor pb = b.decode(features, 12, 12).probability;
    EXPECT_EQ(pa.shape(), (Shape{2, 12, 12}));
    EXPECT_GT(max_abs_diff(pa, pb), 1e-9);
    EXPECT_EQ(kind_of([&] { a.decode(ag::constant(Tensor(Shape{1, 3, 3})), 12, 12); }), ErrorKind::ShapeMismatch);
}

TEST(Model, EncoderIsFrozenAndHeadsTrain)
{
    Model m(small_config());
    for (const Parameter* p : m.trainable_parameters())
        EXPECT_NE(p->name.rfind("encoder.", 0), 0u) << p->name;
    std::size_t frozen = 0;
    for (const Parameter* p : m.parameters())
        frozen += !p->trainable;
    EXPECT_EQ(frozen, 4u);
    EXPECT_NO_THROW(m.parameter("semantic.proj.weight"));
    EXPECT_EQ(kind_of([&] { m.parameter("missing"); }), ErrorKind::InvalidArgument);
}

TEST(Model, EmbeddingSizeIsChecked)
{
    const Model m(small_config());
    const std::vector<double> wrong(4, 0.0);
    EXPECT_EQ(kind_of([&] { m.semantic_vector(wrong); }), ErrorKind::DimensionMismatch);
    model::TaskInput t;
    EXPECT_EQ(kind_of([&] { m.forward(t); }), ErrorKind::EmptySupport);
}

TEST(Model, CheckpointRoundTrip)
{
    const auto dir = scratch_dir("checkpoint");
    Rng rng(12);
    Model m(small_config());
    for (Parameter* p : m.trainable_parameters())
        for (double& v : p->value.values())
            v += rng.uniform(-0.1, 0.1);
    m.save(dir / "m.bin");
    const Model back = Model::load(dir / "m.bin");
    EXPECT_EQ(back.config(), m.config());
    EXPECT_TRUE(same_parameters(m, back));

    ModelConfig other = small_config();
    other.decoder_channels = 7;
    Model different(other);
    EXPECT_EQ(kind_of([&] { different.load_weights(dir / "m.bin"); }), ErrorKind::ConfigMismatch);
    Model same(small_config());
    same.load_weights(dir / "m.bin");
    EXPECT_TRUE(same_parameters(m, same));
}
