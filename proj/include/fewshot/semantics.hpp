#pragma once

// Class-label word embeddings and the semantic conditioning vector z.

#include <filesystem>
#include <istream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fewshot/autograd.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot::semantics {

struct WordEmbedding {
    std::string label;
    std::vector<double> vector;
};

/// Read-only after construction; lookups are safe from several threads.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual int dimension() const = 0;

    /// Vector for a class label. Multi-word labels ("potted plant") that are
    /// not themselves vocabulary entries become the mean of their word vectors.
    /// Throws UnknownLabel for empty labels or words the provider cannot embed.
    WordEmbedding lookup(std::string_view label) const;

protected:
    virtual std::optional<std::vector<double>> word_vector(std::string_view word) const = 0;
};

/// Deterministic pseudo-embedding: a unit-norm Gaussian vector seeded from the word.
class HashEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HashEmbeddingProvider(int dimension, std::uint64_t seed = 0);

    int dimension() const override { return dimension_; }

protected:
    std::optional<std::vector<double>> word_vector(std::string_view word) const override;

private:
    int dimension_;
    std::uint64_t seed_;
};

/// Vectors from a "word v1 v2 ..." text file (optional "COUNT DIM" header line).
class FileEmbeddingProvider final : public EmbeddingProvider {
public:
    static FileEmbeddingProvider load(const std::filesystem::path& path, bool hash_fallback = false);
    static FileEmbeddingProvider parse(std::istream& in, bool hash_fallback = false);

    int dimension() const override { return dimension_; }
    std::size_t vocabulary_size() const { return table_.size(); }
    bool contains(std::string_view word) const;

protected:
    std::optional<std::vector<double>> word_vector(std::string_view word) const override;

private:
    FileEmbeddingProvider() = default;

    int dimension_ = 0;
    std::unordered_map<std::string, std::vector<double>> table_;
    std::shared_ptr<HashEmbeddingProvider> fallback_;
};

/// Writes the text format read by FileEmbeddingProvider, with a header line.
void save_embeddings(const std::filesystem::path& path, const std::vector<WordEmbedding>& entries);

/// z = W·e + b (optionally followed by ReLU). W is d×E, b is d.
ag::Var project(const ag::Var& embedding, const ag::Var& weight, const ag::Var& bias, bool relu = false);
Tensor project(const WordEmbedding& e, const Tensor& weight, const Tensor& bias, bool relu = false);

/// (C,H,W) features and a d-vector -> (C+d,H,W); channel C+j holds z[j] everywhere.
ag::Var tile_and_concat(const ag::Var& features, const ag::Var& z);

}  // namespace fewshot::semantics
