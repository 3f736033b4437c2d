#include "segprompt/nn/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace segprompt::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  nlohmann::json header;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    std::int64_t count = 1;
    for (auto e : t.shape) count *= e;
    if (count != static_cast<std::int64_t>(t.data.size()))
      throw CheckpointError("tensor " + name + ": data length does not match shape");
    header["tensors"].push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.data.size() * sizeof(float);
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!out) throw CheckpointError("short write to " + path.string());
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("bad checkpoint magic in " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (std::uint64_t{1} << 30)) throw CheckpointError("implausible header length in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated checkpoint header in " + path.string());
  const auto payload_start = in.tellg();

  const auto header = nlohmann::json::parse(text);
  TensorMap out;
  for (const auto& entry : header.at("tensors")) {
    StoredTensor t;
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    std::int64_t count = 1;
    for (auto e : t.shape) count *= e;
    t.data.resize(static_cast<std::size_t>(count));
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw CheckpointError("truncated tensor " + entry.at("name").get<std::string>());
    out[entry.at("name").get<std::string>()] = std::move(t);
  }
  return out;
}

}  // namespace segprompt::nn
