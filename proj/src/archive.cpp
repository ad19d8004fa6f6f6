#include "fewshot/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "fewshot/error.hpp"

namespace fewshot::archive {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'T', 'E', 'N', 'S', 'R', '1'};

static_assert(std::endian::native == std::endian::little, "archive payload is written in native little-endian order");

}  // namespace

const Tensor* Archive::find(const std::string& name) const
{
    for (const auto& t : tensors)
        if (t.name == name)
            return &t.tensor;
    return nullptr;
}

void write(const std::filesystem::path& path, const Archive& archive)
{
    nlohmann::json header;
    header["metadata"] = archive.metadata;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : archive.tensors) {
        header["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}});
        offset += t.tensor.size();
    }
    const std::string text = header.dump();
    const std::uint64_t length = text.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write archive " + path.string());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : archive.tensors)
        out.write(reinterpret_cast<const char*>(t.tensor.data()),
                  static_cast<std::streamsize>(t.tensor.size() * sizeof(double)));
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

Archive read(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open archive " + path.string());
    char magic[8] = {};
    in.read(magic, sizeof magic);
    require(in.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0, ErrorKind::Io,
            path.string() + " is not a tensor archive");
    std::uint64_t length = 0;
    in.read(reinterpret_cast<char*>(&length), sizeof length);
    require(static_cast<bool>(in) && length < (1ULL << 32), ErrorKind::Io, "corrupt archive header in " + path.string());
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    require(static_cast<bool>(in), ErrorKind::Io, "truncated archive header in " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Io, "bad archive header in " + path.string() + ": " + e.what());
    }

    const std::streamoff payload = in.tellg();
    Archive archive;
    archive.metadata = header.value("metadata", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        Shape shape = entry.at("shape").get<Shape>();
        Tensor t(shape);
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        in.seekg(payload + static_cast<std::streamoff>(offset * sizeof(double)));
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        require(static_cast<bool>(in), ErrorKind::Io, "truncated tensor '" + entry.at("name").get<std::string>() + "'");
        archive.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
    }
    return archive;
}

}  // namespace fewshot::archive
