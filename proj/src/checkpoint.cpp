#include "missvae/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "missvae/errors.hpp"

namespace missvae {

namespace {

constexpr char kMagic[8] = {'M', 'I', 'S', 'S', 'V', 'A', 'E', '\0'};

} // namespace

void Checkpoint::put(const std::string& name, const Eigen::MatrixXd& m) {
  for (auto& [k, v] : arrays)
    if (k == name) {
      v = m;
      return;
    }
  arrays.emplace_back(name, m);
}

const Eigen::MatrixXd& Checkpoint::get(const std::string& name) const {
  for (const auto& [k, v] : arrays)
    if (k == name) return v;
  throw IngestionError("checkpoint has no array '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [k, v] : arrays)
    if (k == name) return true;
  return false;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header = ckpt.header;
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& [name, m] : ckpt.arrays) layout.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  header["arrays"] = layout;
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : ckpt.arrays)
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    out.flush();
    if (!out) throw IngestionError("short write to checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("missing checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IngestionError(path.string() + ": not a checkpoint file");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || version != kCheckpointVersion) throw IngestionError(path.string() + ": unsupported checkpoint version");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IngestionError(path.string() + ": truncated header");

  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(path.string() + ": bad header: " + e.what());
  }
  for (const auto& entry : ckpt.header.at("arrays")) {
    Eigen::MatrixXd m(entry.at("rows").get<Eigen::Index>(), entry.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw IngestionError(path.string() + ": truncated array " + entry.at("name").get<std::string>());
    ckpt.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(m));
  }
  ckpt.header.erase("arrays");
  return ckpt;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw IngestionError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

} // namespace missvae
