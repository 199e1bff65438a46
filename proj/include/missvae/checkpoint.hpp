#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace missvae {

/// Binary layout: 8-byte magic "MISSVAE\0", uint32 format version, uint64
/// header length, JSON header, then the arrays as raw little-endian doubles
/// (column-major) in header order.
struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;

  void put(const std::string& name, const Eigen::MatrixXd& m);
  /// Throws IngestionError when absent.
  const Eigen::MatrixXd& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Atomic whole-file text write.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

} // namespace missvae
