#pragma once

// Run manifests: what a command read and wrote, with content hashes, plus the
// resolved config needed to run it again.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace doge::app {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
/// Throws FormatError when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

struct FileRecord {
  std::string path;  // relative to the run directory
  std::string sha256;
  std::uint64_t bytes = 0;

  friend bool operator==(const FileRecord&, const FileRecord&) = default;
};

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
  std::string started_at;   // UTC, ISO 8601
  std::string finished_at;
  int exit_code = 0;
};

std::string to_json_text(const RunManifest& m);
/// Throws FormatError on a malformed document.
RunManifest manifest_from_json_text(std::string_view text);

RunManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const RunManifest& m);

std::string utc_timestamp();

/// File access for one command. Every read and write goes through here so the
/// manifest lists exactly the files consumed and produced.
class RunDirectory {
 public:
  explicit RunDirectory(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }
  bool exists(std::string_view rel) const;

  /// Throws FormatError naming the file when it is missing.
  std::string read(std::string_view rel);
  void write(std::string_view rel, std::string_view bytes);

  const std::vector<FileRecord>& inputs() const noexcept { return inputs_; }
  const std::vector<FileRecord>& outputs() const noexcept { return outputs_; }

 private:
  std::filesystem::path root_;
  std::vector<FileRecord> inputs_;
  std::vector<FileRecord> outputs_;
};

}  // namespace doge::app
