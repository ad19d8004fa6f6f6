#pragma once

// Single-file tensor archive:
//
//   "FSTENSR1"                       8-byte magic
//   u64 little-endian header length
//   header (UTF-8 JSON): {"metadata": {...}, "tensors": [{"name","shape","offset"}...]}
//   raw little-endian float64 payload; offsets count doubles from payload start

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fewshot/tensor.hpp"

namespace fewshot::archive {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Archive {
    nlohmann::json metadata;
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const;
};

void write(const std::filesystem::path& path, const Archive& archive);
Archive read(const std::filesystem::path& path);

}  // namespace fewshot::archive
