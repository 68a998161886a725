#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace dosepred::cli {

std::string sha256_file(const std::filesystem::path& file);

/// Everything needed to rerun a subcommand: version, resolved config, seed,
/// paths and content hashes of the inputs.
struct RunManifest {
  std::string subcommand;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> inputs;   // files or directories (hashed recursively)
  std::vector<std::filesystem::path> outputs;

  nlohmann::ordered_json to_json() const;
  void write(const std::filesystem::path& dir) const;
};

/// Exclusive claim on an output directory: creates `<dir>/.lock` or fails,
/// and leaves a FAILED marker behind unless commit() is called.
class OutputGuard {
 public:
  explicit OutputGuard(std::filesystem::path dir);
  ~OutputGuard();
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;

  const std::filesystem::path& dir() const noexcept { return dir_; }
  void commit();
  void fail(const std::string& message);

 private:
  std::filesystem::path dir_;
  bool done_ = false;
};

}  // namespace dosepred::cli
