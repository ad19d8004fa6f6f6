#include "fewshot/semantics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fewshot/error.hpp"
#include "fewshot/rng.hpp"

namespace fewshot::semantics {

namespace {

std::vector<std::string> split_words(std::string_view text)
{
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!current.empty())
                words.push_back(std::move(current));
            current.clear();
        } else {
            current += ch;
        }
    }
    if (!current.empty())
        words.push_back(std::move(current));
    return words;
}

std::string lowercase(std::string_view text)
{
    std::string out(text);
    for (char& ch : out)
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

bool is_unsigned_integer(const std::string& token)
{
    return !token.empty() && std::all_of(token.begin(), token.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

}  // namespace

WordEmbedding EmbeddingProvider::lookup(std::string_view label) const
{
    const auto words = split_words(label);
    require(!words.empty(), ErrorKind::UnknownLabel, "empty class label");

    std::string joined;
    for (const auto& w : words)
        joined += (joined.empty() ? "" : " ") + w;
    if (words.size() > 1) {
        // A phrase with its own vocabulary entry wins over word averaging.
        if (auto v = word_vector(joined))
            return {joined, std::move(*v)};
    }

    std::vector<double> acc(static_cast<std::size_t>(dimension()), 0.0);
    for (const auto& w : words) {
        auto v = word_vector(w);
        require(v.has_value(), ErrorKind::UnknownLabel, "no embedding for word '" + w + "' in label '" + joined + "'");
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] += (*v)[i];
    }
    for (double& x : acc)
        x /= static_cast<double>(words.size());
    return {joined, std::move(acc)};
}

HashEmbeddingProvider::HashEmbeddingProvider(int dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed)
{
    require(dimension >= 1, ErrorKind::InvalidArgument, "embedding dimension must be positive");
}

std::optional<std::vector<double>> HashEmbeddingProvider::word_vector(std::string_view word) const
{
    Rng rng(derive_seed(seed_, fnv1a(lowercase(word))));
    std::vector<double> v(static_cast<std::size_t>(dimension_));
    double norm = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v)
        x /= norm;
    return v;
}

FileEmbeddingProvider FileEmbeddingProvider::load(const std::filesystem::path& path, bool hash_fallback)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open embedding file " + path.string());
    return parse(in, hash_fallback);
}

FileEmbeddingProvider FileEmbeddingProvider::parse(std::istream& in, bool hash_fallback)
{
    FileEmbeddingProvider provider;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        const auto tokens = split_words(line);
        if (tokens.empty())
            continue;
        if (line_no == 1 && tokens.size() == 2 && is_unsigned_integer(tokens[0]) && is_unsigned_integer(tokens[1]))
            continue;  // "COUNT DIM" header
        require(tokens.size() >= 2, ErrorKind::Io, "embedding line " + std::to_string(line_no) + " has no values");
        std::vector<double> values;
        values.reserve(tokens.size() - 1);
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(tokens[i], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            require(used == tokens[i].size() && std::isfinite(v), ErrorKind::Io,
                    "bad value '" + tokens[i] + "' on embedding line " + std::to_string(line_no));
            values.push_back(v);
        }
        if (provider.dimension_ == 0)
            provider.dimension_ = static_cast<int>(values.size());
        require(static_cast<int>(values.size()) == provider.dimension_, ErrorKind::DimensionMismatch,
                "embedding line " + std::to_string(line_no) + " has " + std::to_string(values.size()) +
                    " values, expected " + std::to_string(provider.dimension_));
        provider.table_[tokens[0]] = std::move(values);
    }
    require(provider.dimension_ > 0, ErrorKind::Io, "embedding file has no entries");
    if (hash_fallback)
        provider.fallback_ = std::make_shared<HashEmbeddingProvider>(provider.dimension_);
    return provider;
}

bool FileEmbeddingProvider::contains(std::string_view word) const
{
    return table_.count(std::string(word)) > 0;
}

std::optional<std::vector<double>> FileEmbeddingProvider::word_vector(std::string_view word) const
{
    // Phrases are stored with '_' joining their words ("potted_plant").
    std::string key(word);
    std::replace(key.begin(), key.end(), ' ', '_');
    if (auto it = table_.find(key); it != table_.end())
        return it->second;
    if (auto it = table_.find(lowercase(key)); it != table_.end())
        return it->second;
    if (fallback_)
        return fallback_->lookup(word).vector;
    return std::nullopt;
}

void save_embeddings(const std::filesystem::path& path, const std::vector<WordEmbedding>& entries)
{
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write embedding file " + path.string());
    const std::size_t dim = entries.empty() ? 0 : entries.front().vector.size();
    out << entries.size() << ' ' << dim << '\n';
    out << std::setprecision(17);
    for (const auto& e : entries) {
        require(e.vector.size() == dim, ErrorKind::DimensionMismatch, "ragged embedding table");
        std::string key = e.label;
        std::replace(key.begin(), key.end(), ' ', '_');
        out << key;
        for (double v : e.vector)
            out << ' ' << v;
        out << '\n';
    }
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

ag::Var project(const ag::Var& embedding, const ag::Var& weight, const ag::Var& bias, bool relu)
{
    require(weight.value().rank() == 2, ErrorKind::DimensionMismatch, "projection weight must be d x E");
    require(embedding.value().size() == static_cast<std::size_t>(weight.dim(1)), ErrorKind::DimensionMismatch,
            "embedding of size " + std::to_string(embedding.value().size()) + " for projection " +
                shape_string(weight.shape()));
    ag::Var z = ag::linear(weight, embedding, bias);
    return relu ? ag::relu(z) : z;
}

Tensor project(const WordEmbedding& e, const Tensor& weight, const Tensor& bias, bool relu)
{
    ag::NoGradGuard guard;
    const int n = static_cast<int>(e.vector.size());
    return project(ag::constant(Tensor(Shape{n}, e.vector)), ag::constant(weight), ag::constant(bias), relu).value();
}

ag::Var tile_and_concat(const ag::Var& features, const ag::Var& z)
{
    require(features.value().rank() == 3, ErrorKind::ShapeMismatch,
            "tile_and_concat expects (C,H,W), got " + shape_string(features.shape()));
    require(features.value().all_finite() && z.value().all_finite(), ErrorKind::InvalidArgument,
            "tile_and_concat: non-finite input");
    return ag::concat({features, ag::tile_spatial(z, features.dim(1), features.dim(2))});
}

}  // namespace fewshot::semantics
