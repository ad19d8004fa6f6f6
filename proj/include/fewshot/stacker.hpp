#pragma once

// N-fold stacking of the interaction block with residual connections:
//
//     V_q^{i+1} = φ_q(V_q^i + f_q(V_q^i, V_s^i, z))
//     V_s^{i+1} = φ_s(V_s^i + f_s(V_q^i, V_s^i, z))
//
// f_q / f_s are the interaction block followed by a 1×1 "reduce" head that
// maps the block's concatenated output back to the C channels of the
// residual stream. φ is a 1×1 convolution followed by ReLU.

#include <span>
#include <vector>

#include "fewshot/coattention.hpp"

namespace fewshot::stacker {

struct StageWeights {
    coattention::BlockWeights block;
    ag::Var reduce_q_w, reduce_q_b;  // (C, block output channels), (C)
    ag::Var reduce_s_w, reduce_s_b;
    ag::Var phi_q_w, phi_q_b;        // (C, C), (C)
    ag::Var phi_s_w, phi_s_b;
};

struct StackResult {
    ag::Var query;
    std::vector<ag::Var> supports;
    std::vector<ag::Var> query_gates;  // one per stage (undefined for the semantic variant)
};

/// One residual stage.
StackResult apply_stage(const ag::Var& query, std::span<const ag::Var> supports, const ag::Var& z,
                        const StageWeights& stage, coattention::Variant variant);

/// Runs `stages.size()` stages in sequence; output shapes equal input shapes.
StackResult stack_forward(const ag::Var& query, std::span<const ag::Var> supports, const ag::Var& z,
                          std::span<const StageWeights> stages, coattention::Variant variant);

}  // namespace fewshot::stacker
