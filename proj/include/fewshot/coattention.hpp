#pragma once

// Gated co-attention between a query feature map and k support feature maps.
//
// Feature maps are (C,H,W) tensors; their flattened (C, H*W) form has one
// column per spatial location. For support locations i and query locations j
//
//     S[i,j]  = vs[:,i]ᵀ · W_co · vq[:,j]
//     S_c     = softmax over i of S      (column j: where in the support query location j looks)
//     S_r     = softmax over j of Sᵀ     (column i: where in the query support location i looks)
//     U_q     = vs · S_c,   U_s = vq · S_r
//
// and every summary is gated per location by σ(W_g·U + b_g).

#include <span>
#include <string_view>
#include <vector>

#include "fewshot/autograd.hpp"

namespace fewshot::coattention {

enum class Variant {
    VisualSemantic,  // "vs": co-attention over semantically conditioned features
    Visual,          // "v": co-attention over visual features only
    Semantic,        // "s": no co-attention, features conditioned on z only
};

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

struct Affinity {
    ag::Var s;    // (HW_s, HW_q)
    ag::Var s_c;  // column softmax of S
    ag::Var s_r;  // column softmax of Sᵀ, (HW_q, HW_s)
};

Affinity affinity(const ag::Var& support, const ag::Var& query, const ag::Var& w_co);

struct Summaries {
    ag::Var query;    // U_q, (C',H,W)
    ag::Var support;  // U_s, (C',H,W)
};

Summaries summaries(const ag::Var& support, const ag::Var& query, const Affinity& a);

struct GatedSummary {
    ag::Var gate;    // σ(W_g·U + b_g), entries in (0,1)
    ag::Var output;  // gate ∘ U
};

/// `w_g` is a (C',C') channel-mixing matrix applied at every location, `b_g` is (C').
GatedSummary gate(const ag::Var& u, const ag::Var& w_g, const ag::Var& b_g);

/// Learnable tensors of one interaction block, already bound into the graph.
struct BlockWeights {
    ag::Var w_co;
    ag::Var gate_w;
    ag::Var gate_b;
    // Separate support-stream gate; left undefined to share the query gate.
    ag::Var support_gate_w;
    ag::Var support_gate_b;
    // Semantic-only fusion: (C, C+d) weights and (C) bias.
    ag::Var fuse_w;
    ag::Var fuse_b;
};

struct Interaction {
    ag::Var query;                  // concat(mean gated U_q, conditioned V_q)
    std::vector<ag::Var> supports;  // concat(gated U_s^i, conditioned V_s^i)
    ag::Var query_gate;             // mean over shots of the U_q gates; undefined for Semantic
};

/// Channel count C' the block attends over for input channels C and semantic size d.
int conditioned_channels(Variant v, int channels, int semantic_dim);
/// Channel count of `Interaction::query` (2C' for attention variants, C for Semantic).
int output_channels(Variant v, int channels, int semantic_dim);

/// One multi-modal interaction for a query and k >= 1 supports. The k gated
/// query summaries are averaged. `z` may be undefined for Variant::Visual.
Interaction interact(const ag::Var& query, std::span<const ag::Var> supports, const ag::Var& z,
                     const BlockWeights& weights, Variant variant);

}  // namespace fewshot::coattention
