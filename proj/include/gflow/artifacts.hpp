#pragma once

// Output directory with a SHA-256 manifest. All files of a run go through
// one writer; the manifest uses the `sha256sum` line format, so
// `sha256sum -c manifest.sha256` also verifies it.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gflow/io.hpp"

namespace gflow::lab {

inline constexpr const char* manifest_name = "manifest.sha256";

class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }

  void write(const std::string& name, const std::string& content) {
    if (name.empty() || name == manifest_name || name.find("..") != std::string::npos)
      throw std::invalid_argument("artifact: bad file name '" + name + "'");
    const auto path = dir_ / name;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw std::runtime_error("artifact: cannot write " + path.string());
    hashes_[name] = sha256_hex(content);
  }

  /// Writes a file produced elsewhere (e.g. a snapshot) into the manifest.
  void adopt(const std::string& name) {
    std::ifstream in(dir_ / name, std::ios::binary);
    if (!in) throw std::runtime_error("artifact: cannot read " + (dir_ / name).string());
    std::ostringstream ss;
    ss << in.rdbuf();
    hashes_[name] = sha256_hex(ss.str());
  }

  const std::map<std::string, std::string>& hashes() const { return hashes_; }

  void write_manifest() const {
    std::ofstream out(dir_ / manifest_name, std::ios::binary);
    for (const auto& [name, hash] : hashes_) out << hash << "  " << name << '\n';
    if (!out) throw std::runtime_error("artifact: cannot write manifest");
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> hashes_;
};

struct ManifestCheck {
  bool ok = true;
  std::vector<std::string> problems;  ///< "<file>: missing" / "<file>: hash mismatch"
  std::size_t files = 0;
};

inline ManifestCheck verify_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / manifest_name);
  if (!in) throw std::runtime_error("manifest: cannot open " + (dir / manifest_name).string());
  ManifestCheck r;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.size() < 67 || line.substr(64, 2) != "  ") throw std::runtime_error("manifest: malformed line '" + line + "'");
    const std::string hash = line.substr(0, 64), name = line.substr(66);
    ++r.files;
    std::ifstream f(dir / name, std::ios::binary);
    if (!f) {
      r.ok = false;
      r.problems.push_back(name + ": missing");
      continue;
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    if (sha256_hex(ss.str()) != hash) {
      r.ok = false;
      r.problems.push_back(name + ": hash mismatch");
    }
  }
  return r;
}

}  // namespace gflow::lab
