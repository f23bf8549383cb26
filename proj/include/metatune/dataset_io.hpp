#pragma once

// On-disk patient and dataset layout.
//
//   <patient>/manifest.txt   key=value lines (UTF-8)
//   <patient>/volume.f32     float32 LE, C-order [slices, channels, H, W]
//   <patient>/labels.u8      uint8, C-order [slices, H, W]
//   <dataset>/dataset.txt    one "dir<TAB>split" line per patient

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metatune/binary_io.hpp"
#include "metatune/synthdata.hpp"

namespace metatune {

namespace fs = std::filesystem;

inline constexpr int kPatientFormatVersion = 1;

/// Receives non-fatal diagnostics (e.g. unknown manifest keys).
using WarningSink = std::function<void(const std::string&)>;

inline void default_warning(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

/// Parses UTF-8 `key=value` lines; blank lines and '#' comments are skipped.
inline std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string(), "", "cannot open for reading");
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw IoError(path.string(), "line " + std::to_string(lineno), "expected key=value");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

namespace io_detail {

inline std::uint64_t parse_u64(const std::map<std::string, std::string>& kv, const std::string& key,
                               const std::string& file) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw IoError(file, key, "missing field");
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw IoError(file, key, "not an unsigned integer: '" + it->second + "'");
  }
}

inline std::string parse_str(const std::map<std::string, std::string>& kv, const std::string& key,
                             const std::string& file) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw IoError(file, key, "missing field");
  return it->second;
}

inline std::vector<unsigned char> read_bytes(const fs::path& path, std::size_t expected,
                                             const std::string& field) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), field, "cannot open for reading");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() != expected) {
    throw IoError(path.string(), field,
                  "expected " + std::to_string(expected) + " bytes, found " + std::to_string(buf.size()));
  }
  return buf;
}

}  // namespace io_detail

inline void write_patient(const PatientVolume& vol, const fs::path& dir) {
  if (vol.slices.empty()) throw ValueError("write_patient", "volume has no slices");
  fs::create_directories(dir);
  const Sample& first = vol.slices.front();
  const std::size_t channels = first.image.dim(0), h = first.image.dim(1), w = first.image.dim(2);
  {
    std::ofstream os(dir / "manifest.txt", std::ios::binary | std::ios::trunc);
    if (!os) throw IoError((dir / "manifest.txt").string(), "", "cannot open for writing");
    os << "format_version=" << kPatientFormatVersion << '\n'
       << "patient_id=" << vol.patient_id << '\n'
       << "domain=" << to_string(vol.domain) << '\n'
       << "seed=" << vol.seed << '\n'
       << "slices=" << vol.slices.size() << '\n'
       << "height=" << h << '\n'
       << "width=" << w << '\n'
       << "channels=" << channels << '\n'
       << "classes=" << kNumClasses << '\n';
  }
  std::ofstream vf(dir / "volume.f32", std::ios::binary | std::ios::trunc);
  std::ofstream lf(dir / "labels.u8", std::ios::binary | std::ios::trunc);
  if (!vf || !lf) throw IoError(dir.string(), "", "cannot open volume files for writing");
  for (const Sample& s : vol.slices) {
    if (s.image.shape() != Shape{channels, h, w}) {
      throw ShapeError("write_patient", s.image.shape(), Shape{channels, h, w});
    }
    for (double v : s.image.data()) binio::put_f32(vf, static_cast<float>(v));
    lf.write(reinterpret_cast<const char*>(s.labels.data.data()),
             static_cast<std::streamsize>(s.labels.data.size()));
  }
  if (!vf || !lf) throw IoError(dir.string(), "", "write failed");
}

inline PatientVolume read_patient(const fs::path& dir, const WarningSink& warn = default_warning) {
  using namespace io_detail;
  const fs::path mpath = dir / "manifest.txt";
  const std::string mfile = mpath.string();
  const auto kv = read_key_values(mpath);
  static const char* known[] = {"format_version", "patient_id", "domain", "seed", "slices",
                                "height", "width", "channels", "classes"};
  for (const auto& [key, value] : kv) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      warn(mfile + ": ignoring unknown key '" + key + "'");
    }
  }
  const auto version = parse_u64(kv, "format_version", mfile);
  if (version != kPatientFormatVersion) {
    throw IoError(mfile, "format_version", "unsupported version " + std::to_string(version));
  }
  PatientVolume vol;
  vol.patient_id = parse_str(kv, "patient_id", mfile);
  try {
    vol.domain = parse_domain(parse_str(kv, "domain", mfile));
  } catch (const ValueError& e) {
    throw IoError(mfile, "domain", e.what());
  }
  vol.seed = parse_u64(kv, "seed", mfile);
  const std::size_t slices = parse_u64(kv, "slices", mfile);
  const std::size_t h = parse_u64(kv, "height", mfile);
  const std::size_t w = parse_u64(kv, "width", mfile);
  const std::size_t channels = parse_u64(kv, "channels", mfile);
  const std::size_t classes = parse_u64(kv, "classes", mfile);
  if (slices == 0 || h == 0 || w == 0 || channels == 0) {
    throw IoError(mfile, "slices", "dimensions must be positive");
  }
  if (classes == 0 || classes > 256) throw IoError(mfile, "classes", "must be in 1..256");

  const std::size_t plane = h * w;
  const auto vbytes = read_bytes(dir / "volume.f32", slices * channels * plane * 4, "volume");
  const auto lbytes = read_bytes(dir / "labels.u8", slices * plane, "labels");
  vol.slices.reserve(slices);
  for (std::size_t z = 0; z < slices; ++z) {
    Sample s{Tensor(Shape{channels, h, w}), LabelMap(h, w)};
    const unsigned char* src = vbytes.data() + z * channels * plane * 4;
    for (std::size_t i = 0; i < channels * plane; ++i) s.image[i] = binio::f32_from_le(src + 4 * i);
    std::copy_n(lbytes.begin() + static_cast<long>(z * plane), plane, s.labels.data.begin());
    for (std::uint8_t l : s.labels.data) {
      if (l >= classes) {
        throw IoError((dir / "labels.u8").string(), "labels",
                      "label " + std::to_string(l) + " out of range in slice " + std::to_string(z));
      }
    }
    vol.slices.push_back(std::move(s));
  }
  return vol;
}

enum class Split { train, val };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

struct DatasetEntry {
  std::string dir;  // relative to the dataset root
  Split split = Split::train;
};

/// Patients with index >= n - floor(n / 5) are validation; the rest train.
inline Split split_for_index(std::size_t index, std::size_t n) {
  return index >= n - n / 5 ? Split::val : Split::train;
}

inline std::vector<DatasetEntry> gen_dataset(Domain domain, std::size_t n_patients,
                                             std::uint64_t seed_base, const GenConfig& cfg,
                                             const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string(), "", "cannot create directory: " + ec.message());
  std::vector<DatasetEntry> entries;
  for (std::size_t i = 0; i < n_patients; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "patient_%03zu", i);
    write_patient(gen_patient(domain, seed_base + i, cfg), out_dir / name);
    entries.push_back({name, split_for_index(i, n_patients)});
  }
  std::ofstream os(out_dir / "dataset.txt", std::ios::binary | std::ios::trunc);
  if (!os) throw IoError((out_dir / "dataset.txt").string(), "", "cannot open for writing");
  for (const DatasetEntry& e : entries) os << e.dir << '\t' << to_string(e.split) << '\n';
  if (!os) throw IoError((out_dir / "dataset.txt").string(), "", "write failed");
  return entries;
}

inline std::vector<DatasetEntry> read_dataset_manifest(const fs::path& root) {
  const fs::path path = root / "dataset.txt";
  std::ifstream is(path);
  if (!is) throw IoError(path.string(), "", "cannot open for reading");
  std::vector<DatasetEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IoError(path.string(), "line " + std::to_string(lineno), "expected dir<TAB>split");
    }
    const std::string split = line.substr(tab + 1);
    if (split != "train" && split != "val") {
      throw IoError(path.string(), "line " + std::to_string(lineno), "unknown split '" + split + "'");
    }
    entries.push_back({line.substr(0, tab), split == "train" ? Split::train : Split::val});
  }
  return entries;
}

/// Loads every patient of one split, in manifest order.
inline std::vector<PatientVolume> load_split(const fs::path& root, Split split,
                                             const WarningSink& warn = default_warning) {
  std::vector<PatientVolume> out;
  for (const DatasetEntry& e : read_dataset_manifest(root)) {
    if (e.split == split) out.push_back(read_patient(root / e.dir, warn));
  }
  return out;
}

}  // namespace metatune
