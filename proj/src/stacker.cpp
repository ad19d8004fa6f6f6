#include "fewshot/stacker.hpp"

#include "fewshot/error.hpp"

namespace fewshot::stacker {

namespace {

ag::Var residual_step(const ag::Var& stream, const ag::Var& block_out, const ag::Var& reduce_w,
                      const ag::Var& reduce_b, const ag::Var& phi_w, const ag::Var& phi_b)
{
    const ag::Var f = ag::conv1x1(block_out, reduce_w, reduce_b);
    require(f.shape() == stream.shape(), ErrorKind::ShapeMismatch,
            "stage reduce head gives " + shape_string(f.shape()) + " for stream " + shape_string(stream.shape()));
    return ag::relu(ag::conv1x1(ag::add(stream, f), phi_w, phi_b));
}

}  // namespace

StackResult apply_stage(const ag::Var& query, std::span<const ag::Var> supports, const ag::Var& z,
                        const StageWeights& stage, coattention::Variant variant)
{
    const coattention::Interaction block = coattention::interact(query, supports, z, stage.block, variant);
    StackResult out;
    out.query = residual_step(query, block.query, stage.reduce_q_w, stage.reduce_q_b, stage.phi_q_w, stage.phi_q_b);
    out.supports.reserve(supports.size());
    for (std::size_t i = 0; i < supports.size(); ++i)
        out.supports.push_back(residual_step(supports[i], block.supports[i], stage.reduce_s_w, stage.reduce_s_b,
                                             stage.phi_s_w, stage.phi_s_b));
    out.query_gates.push_back(block.query_gate);
    return out;
}

StackResult stack_forward(const ag::Var& query, std::span<const ag::Var> supports, const ag::Var& z,
                          std::span<const StageWeights> stages, coattention::Variant variant)
{
    require(!stages.empty(), ErrorKind::InvalidArgument, "stack depth must be at least 1");
    StackResult current{query, std::vector<ag::Var>(supports.begin(), supports.end()), {}};
    for (const StageWeights& stage : stages) {
        StackResult next = apply_stage(current.query, current.supports, z, stage, variant);
        next.query_gates.insert(next.query_gates.begin(), current.query_gates.begin(), current.query_gates.end());
        current = std::move(next);
    }
    return current;
}

}  // namespace fewshot::stacker
