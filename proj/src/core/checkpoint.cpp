#include "core/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace miscal {

namespace {
constexpr char kMagic[8] = {'M', 'S', 'C', 'L', 'C', 'K', 'P', '1'};
}

const nn::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : ckpt.tensors) {
    table.push_back({{"name", name}, {"shape", tensor.shape}, {"offset", offset}});
    offset += tensor.numel();
  }
  header["tensors"] = table;
  const std::string header_str = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + tmp);
    f.write(kMagic, sizeof(kMagic));
    const std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, tensor] : ckpt.tensors)
      f.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
    if (!f) throw std::runtime_error("short write on checkpoint: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename checkpoint into place: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_str(len, '\0');
  f.read(header_str.data(), len);
  if (!f) throw std::runtime_error("truncated checkpoint header: " + path);

  nlohmann::json header = nlohmann::json::parse(header_str);
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    nn::Tensor t(entry.at("shape").get<std::vector<int>>());
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!f) throw std::runtime_error("truncated checkpoint data: " + path);
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

}  // namespace miscal
