#include "doge/app/manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <sstream>

#include "doge/error.hpp"

namespace doge::app {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw FormatError("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json record_json(const FileRecord& r) { return {{"path", r.path}, {"sha256", r.sha256}, {"bytes", r.bytes}}; }

std::vector<FileRecord> records_from(const json& arr) {
  std::vector<FileRecord> out;
  for (const auto& j : arr) {
    out.push_back({j.at("path").get<std::string>(), j.at("sha256").get<std::string>(), j.at("bytes").get<std::uint64_t>()});
  }
  return out;
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(slurp(path)); }

std::string to_json_text(const RunManifest& m) {
  json j;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = json::array();
  for (const auto& r : m.inputs) j["inputs"].push_back(record_json(r));
  j["outputs"] = json::array();
  for (const auto& r : m.outputs) j["outputs"].push_back(record_json(r));
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["exit_code"] = m.exit_code;
  return j.dump(2) + "\n";
}

RunManifest manifest_from_json_text(std::string_view text) {
  try {
    const json j = json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    m.inputs = records_from(j.at("inputs"));
    m.outputs = records_from(j.at("outputs"));
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    m.exit_code = j.value("exit_code", 0);
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
}

RunManifest read_manifest(const fs::path& path) { return manifest_from_json_text(slurp(path)); }

void write_manifest(const fs::path& path, const RunManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << to_json_text(m);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunDirectory::RunDirectory(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

bool RunDirectory::exists(std::string_view rel) const { return fs::exists(root_ / fs::path(rel)); }

std::string RunDirectory::read(std::string_view rel) {
  const fs::path p = root_ / fs::path(rel);
  if (!fs::exists(p)) throw FormatError("missing input file '" + p.string() + "'");
  std::string bytes = slurp(p);
  inputs_.push_back({std::string(rel), sha256_hex(bytes), bytes.size()});
  return bytes;
}

void RunDirectory::write(std::string_view rel, std::string_view bytes) {
  const fs::path p = root_ / fs::path(rel);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + p.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for '" + p.string() + "'");
  std::erase_if(outputs_, [&](const FileRecord& r) { return r.path == rel; });
  outputs_.push_back({std::string(rel), sha256_hex(bytes), bytes.size()});
}

}  // namespace doge::app
