#pragma once

// Self-describing run directories: run_manifest.txt is written when a run
// starts (status=running) and rewritten when it finishes (status=complete).

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "metatune/dataset_io.hpp"

namespace metatune::cli {

inline constexpr const char* kRunManifest = "run_manifest.txt";

inline std::string hex64(std::uint64_t h) {
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

/// FNV-1a 64 over the file's bytes, as 16 hex digits.
inline std::string hash_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "", "cannot open for hashing");
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
  }
  return hex64(h);
}

/// Combined hash of a dataset: dataset.txt plus every patient's files, in
/// manifest order.
inline std::string hash_dataset(const fs::path& root) {
  std::string all = hash_file(root / "dataset.txt");
  for (const DatasetEntry& e : read_dataset_manifest(root)) {
    for (const char* f : {"manifest.txt", "volume.f32", "labels.u8"}) all += hash_file(root / e.dir / f);
  }
  return hex64(fnv1a(all));
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string full_precision(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class RunManifest {
 public:
  RunManifest(fs::path dir, std::string run_id, std::string command_line)
      : dir_(std::move(dir)) {
    set("run_id", std::move(run_id));
    set("command_line", std::move(command_line));
    set("started_at", utc_now());
  }

  void set(const std::string& key, std::string value) {
    for (auto& [k, v] : entries_) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    entries_.emplace_back(key, std::move(value));
  }
  void set(const std::string& key, double value) { set(key, full_precision(value)); }
  void set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

  void start() {
    set("status", std::string("running"));
    write();
  }

  void finish() {
    set("finished_at", utc_now());
    set("status", std::string("complete"));
    write();
  }

 private:
  void write() const {
    const fs::path path = dir_ / kRunManifest;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(path.string(), "", "cannot open for writing");
    for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
    if (!os) throw IoError(path.string(), "", "write failed");
  }

  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace metatune::cli
