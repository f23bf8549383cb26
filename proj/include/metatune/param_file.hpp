#pragma once

// ".mtp" parameter files:
//   "MTTP" | u32 version | u32 in_channels, num_classes, base_width,
//   image_size, kernel_size | every parameter tensor in ParamVector order as
//   f64. All integers and floats little-endian.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "metatune/binary_io.hpp"
#include "metatune/segnet.hpp"

namespace metatune {

inline constexpr char kParamMagic[4] = {'M', 'T', 'T', 'P'};
inline constexpr std::uint32_t kParamFormatVersion = 1;

inline void write_params(const ParamVector& p, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path.string(), "", "cannot open for writing");
  os.write(kParamMagic, 4);
  binio::put_le<std::uint32_t>(os, kParamFormatVersion);
  const NetworkConfig& c = p.config;
  for (std::uint32_t v : {c.in_channels, c.num_classes, c.base_width, c.image_size, c.kernel_size}) {
    binio::put_le<std::uint32_t>(os, v);
  }
  for (const Tensor& t : p.tensors) {
    for (double v : t.data()) binio::put_f64(os, v);
  }
  if (!os) throw IoError(path.string(), "", "write failed");
}

inline ParamVector read_params(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(file, "", "cannot open for reading");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kParamMagic, 4) != 0) {
    throw IoError(file, "magic", "not an MTTP parameter file");
  }
  const auto version = binio::get_le<std::uint32_t>(is, file, "version");
  if (version != kParamFormatVersion) {
    throw IoError(file, "version", "unsupported format version " + std::to_string(version));
  }
  NetworkConfig cfg;
  cfg.in_channels = binio::get_le<std::uint32_t>(is, file, "in_channels");
  cfg.num_classes = binio::get_le<std::uint32_t>(is, file, "num_classes");
  cfg.base_width = binio::get_le<std::uint32_t>(is, file, "base_width");
  cfg.image_size = binio::get_le<std::uint32_t>(is, file, "image_size");
  cfg.kernel_size = binio::get_le<std::uint32_t>(is, file, "kernel_size");
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw IoError(file, "config", e.what());
  }
  ParamVector p = init_params(cfg, 0);
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    for (double& v : p.tensors[t].data()) v = binio::get_f64(is, file, p.names[t]);
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw IoError(file, "", "trailing bytes after parameter data");
  }
  return p;
}

}  // namespace metatune
