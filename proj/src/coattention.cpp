#include "fewshot/coattention.hpp"

#include <string>

#include "fewshot/error.hpp"
#include "fewshot/semantics.hpp"

namespace fewshot::coattention {

namespace {

ag::Var flatten(const ag::Var& map)
{
    return ag::reshape(map, Shape{map.dim(0), map.dim(1) * map.dim(2)});
}

void check_map(const ag::Var& v, const char* what)
{
    require(v.defined() && v.value().rank() == 3 && v.dim(0) >= 1 && v.dim(1) >= 1 && v.dim(2) >= 1,
            ErrorKind::ShapeMismatch, std::string(what) + " must be a non-empty (C,H,W) map");
}

}  // namespace

std::string_view to_string(Variant v)
{
    switch (v) {
    case Variant::VisualSemantic: return "vs";
    case Variant::Visual: return "v";
    case Variant::Semantic: return "s";
    }
    return "?";
}

Variant parse_variant(std::string_view text)
{
    if (text == "vs" || text == "v+s" || text == "V+S")
        return Variant::VisualSemantic;
    if (text == "v" || text == "V")
        return Variant::Visual;
    if (text == "s" || text == "S")
        return Variant::Semantic;
    fail(ErrorKind::InvalidArgument, "unknown variant '" + std::string(text) + "' (expected vs, v or s)");
}

Affinity affinity(const ag::Var& support, const ag::Var& query, const ag::Var& w_co)
{
    check_map(support, "support");
    check_map(query, "query");
    require(support.shape() == query.shape(), ErrorKind::ShapeMismatch,
            "affinity: support " + shape_string(support.shape()) + " vs query " + shape_string(query.shape()));
    const int c = query.dim(0);
    require(w_co.shape() == Shape{c, c}, ErrorKind::ShapeMismatch,
            "affinity: W_co " + shape_string(w_co.shape()) + " for " + std::to_string(c) + " channels");
    const ag::Var vs = flatten(support);
    const ag::Var vq = flatten(query);
    Affinity a;
    a.s = ag::matmul(ag::transpose(vs), ag::matmul(w_co, vq));
    a.s_c = ag::softmax_columns(a.s);
    a.s_r = ag::softmax_columns(ag::transpose(a.s));
    return a;
}

Summaries summaries(const ag::Var& support, const ag::Var& query, const Affinity& a)
{
    check_map(support, "support");
    check_map(query, "query");
    const int hw_s = support.dim(1) * support.dim(2);
    const int hw_q = query.dim(1) * query.dim(2);
    require(a.s_c.shape() == Shape{hw_s, hw_q} && a.s_r.shape() == Shape{hw_q, hw_s}, ErrorKind::ShapeMismatch,
            "summaries: affinity does not match the feature maps");
    require(support.dim(0) == query.dim(0), ErrorKind::ShapeMismatch, "summaries: channel mismatch");
    Summaries out;
    out.query = ag::reshape(ag::matmul(flatten(support), a.s_c), query.shape());
    out.support = ag::reshape(ag::matmul(flatten(query), a.s_r), support.shape());
    return out;
}

GatedSummary gate(const ag::Var& u, const ag::Var& w_g, const ag::Var& b_g)
{
    check_map(u, "summary");
    const int c = u.dim(0);
    require(w_g.shape() == Shape{c, c} && b_g.value().size() == static_cast<std::size_t>(c), ErrorKind::ShapeMismatch,
            "gate weights " + shape_string(w_g.shape()) + " for summary " + shape_string(u.shape()));
    GatedSummary g;
    g.gate = ag::sigmoid(ag::conv1x1(u, w_g, b_g));
    g.output = ag::mul(g.gate, u);
    return g;
}

int conditioned_channels(Variant v, int channels, int semantic_dim)
{
    return v == Variant::VisualSemantic ? channels + semantic_dim : channels;
}

int output_channels(Variant v, int channels, int semantic_dim)
{
    return v == Variant::Semantic ? channels : 2 * conditioned_channels(v, channels, semantic_dim);
}

Interaction interact(const ag::Var& query, std::span<const ag::Var> supports, const ag::Var& z,
                     const BlockWeights& weights, Variant variant)
{
    check_map(query, "query");
    require(!supports.empty(), ErrorKind::EmptySupport, "interaction needs at least one support map");
    for (const ag::Var& s : supports) {
        check_map(s, "support");
        require(s.shape() == query.shape(), ErrorKind::ShapeMismatch,
                "support " + shape_string(s.shape()) + " vs query " + shape_string(query.shape()));
    }
    const bool semantic = variant != Variant::Visual;
    if (semantic)
        require(z.defined(), ErrorKind::InvalidArgument, "semantic variants need a semantic vector");

    Interaction out;
    if (variant == Variant::Semantic) {
        auto fuse = [&](const ag::Var& v) {
            return ag::relu(ag::conv1x1(semantics::tile_and_concat(v, z), weights.fuse_w, weights.fuse_b));
        };
        out.query = fuse(query);
        for (const ag::Var& s : supports)
            out.supports.push_back(fuse(s));
        return out;
    }

    const ag::Var vq = semantic ? semantics::tile_and_concat(query, z) : query;
    const bool shared = !weights.support_gate_w.defined();
    const ag::Var& sg_w = shared ? weights.gate_w : weights.support_gate_w;
    const ag::Var& sg_b = shared ? weights.gate_b : weights.support_gate_b;

    std::vector<ag::Var> gated_query;
    std::vector<ag::Var> query_gates;
    for (const ag::Var& s : supports) {
        const ag::Var vs = semantic ? semantics::tile_and_concat(s, z) : s;
        const Affinity a = affinity(vs, vq, weights.w_co);
        const Summaries u = summaries(vs, vq, a);
        GatedSummary gq = gate(u.query, weights.gate_w, weights.gate_b);
        GatedSummary gs = gate(u.support, sg_w, sg_b);
        gated_query.push_back(gq.output);
        query_gates.push_back(gq.gate);
        out.supports.push_back(ag::concat({gs.output, vs}));
    }
    out.query = ag::concat({ag::mean(gated_query), vq});
    out.query_gate = ag::mean(query_gates);
    return out;
}

}  // namespace fewshot::coattention
