#pragma once

// Procedural source-domain (one large irregular lesion per affected slice)
// and target-domain (several small round lesions) patients. Both domains
// share the tissue intensity table below, so the only shift between them is
// lesion structure.
//
// Channels: 0 FLAIR, 1 T1, 2 T1 contrast-enhanced, 3 T2.
// Labels:   0 background, 1 edema, 2 necrosis, 3 enhancing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "metatune/error.hpp"
#include "metatune/rng.hpp"
#include "metatune/sample.hpp"

namespace metatune {

enum class Domain { source, target };

inline std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

/// Accepts the canonical names plus the tumour-type aliases used on the
/// command line (glioma/hgg for source, mets/metastasis for target).
inline Domain parse_domain(const std::string& s) {
  if (s == "source" || s == "glioma" || s == "hgg") return Domain::source;
  if (s == "target" || s == "mets" || s == "metastasis") return Domain::target;
  throw ValueError("domain", "unknown domain '" + s + "' (expected source|glioma|hgg|target|mets)");
}

enum Label : std::uint8_t { kBackground = 0, kEdema = 1, kNecrosis = 2, kEnhancing = 3 };
inline constexpr std::size_t kNumChannels = 4;
inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::size_t kT1cChannel = 2;

enum class Tissue { air, skull, brain, edema, necrosis, enhancing };

/// Mean intensity of each tissue per channel {FLAIR, T1, T1c, T2}. The
/// enhancing T1c entry is brain T1c + contrast_margin and is filled in at
/// generation time.
inline std::array<double, kNumChannels> tissue_intensity(Tissue t, double contrast_margin) {
  switch (t) {
    case Tissue::air: return {0.00, 0.00, 0.00, 0.00};
    case Tissue::skull: return {0.75, 0.60, 0.30, 0.70};
    case Tissue::brain: return {0.35, 0.45, 0.30, 0.35};
    case Tissue::edema: return {0.75, 0.35, 0.30, 0.75};
    case Tissue::necrosis: return {0.45, 0.20, 0.20, 0.85};
    case Tissue::enhancing: return {0.55, 0.40, 0.30 + contrast_margin, 0.55};
  }
  return {};
}

struct GenConfig {
  std::size_t image_size = 64;
  std::size_t slices = 25;
  double noise_sigma = 0.05;
  double contrast_margin = 0.3;
  bool skull = true;

  void validate() const {
    if (image_size < 16 || image_size % 4 != 0) {
      throw ValueError("GenConfig", "image_size must be a multiple of 4 and at least 16");
    }
    if (slices == 0) throw ValueError("GenConfig", "slices must be positive");
    if (!(noise_sigma >= 0.0)) throw ValueError("GenConfig", "noise_sigma must be >= 0");
    if (!(contrast_margin > 2.0 * noise_sigma)) {
      throw ValueError("GenConfig", "contrast_margin must exceed 2 * noise_sigma");
    }
    if (contrast_margin > 0.7) throw ValueError("GenConfig", "contrast_margin must be <= 0.7");
  }
};

struct PatientVolume {
  std::string patient_id;
  Domain domain = Domain::source;
  std::uint64_t seed = 0;
  std::vector<Sample> slices;

  friend bool operator==(const PatientVolume&, const PatientVolume&) = default;
};

namespace synth_detail {

/// A lesion is concentric shells scaled by an angular shape factor:
/// necrotic core, enhancing rim, edema halo (all radii in pixels).
struct LesionShape {
  double cx = 0, cy = 0;
  double outer = 0;      // edema halo outer radius
  double tumor = 0;      // enhancing rim outer radius
  double core = 0;       // necrosis radius (0 = none)
  std::array<double, 3> amp{};    // radial harmonics m = 2, 3, 4
  std::array<double, 3> phase{};
};

struct Lesion3d {
  LesionShape shape;  // at the axial centre
  double z0 = 0;
  double half_extent = 0;
  bool irregular = false;
};

inline double shape_factor(const LesionShape& s, double theta) {
  double f = 1.0;
  for (std::size_t m = 0; m < 3; ++m) f += s.amp[m] * std::cos(static_cast<double>(m + 2) * theta + s.phase[m]);
  return f;
}

/// Label at (x, y) from one lesion, or background.
inline std::uint8_t lesion_label(const LesionShape& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  const double r = std::sqrt(dx * dx + dy * dy);
  if (r > s.outer * 1.25) return kBackground;
  const double f = shape_factor(s, std::atan2(dy, dx));
  if (r <= s.core * f) return kNecrosis;
  if (r <= s.tumor * f) return kEnhancing;
  if (r <= s.outer * f) return kEdema;
  return kBackground;
}

/// Source lesions: radius in [10, 18] px (scaled to image size) on every
/// slice they touch; irregular outline; wide halo and necrotic core.
inline Lesion3d source_lesion(Rng& rng, const GenConfig& cfg, double a, double b) {
  const double px = static_cast<double>(cfg.image_size) / 64.0;
  const double n = static_cast<double>(cfg.slices);
  Lesion3d l;
  l.irregular = true;
  l.z0 = n * rng.uniform(0.35, 0.65);
  l.half_extent = std::max(1.0, n * rng.uniform(0.2, 0.32));
  l.shape.outer = px * rng.uniform(12.0, 18.0);
  for (std::size_t m = 0; m < 3; ++m) {
    l.shape.amp[m] = rng.uniform(0.0, 0.05);
    l.shape.phase[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  // Keep the centre far enough inside the brain that the lesion fits.
  const double room_x = std::max(1.0, a - l.shape.outer * 1.05);
  const double room_y = std::max(1.0, b - l.shape.outer * 1.05);
  const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double rr = std::sqrt(rng.uniform()) * 0.9;
  const double c = static_cast<double>(cfg.image_size) / 2.0;
  l.shape.cx = c + rr * room_x * std::cos(t);
  l.shape.cy = c + rr * room_y * std::sin(t);
  return l;
}

/// Target lesions: round, radius in [2, 5] px (scaled), thin rim, narrow
/// halo, necrosis only in the larger ones.
inline Lesion3d target_lesion(Rng& rng, const GenConfig& cfg, double a, double b) {
  const double px = static_cast<double>(cfg.image_size) / 64.0;
  const double n = static_cast<double>(cfg.slices);
  Lesion3d l;
  l.irregular = false;
  l.z0 = rng.uniform(0.15 * n, 0.85 * n);
  l.half_extent = std::max(1.0, n * rng.uniform(0.06, 0.14));
  l.shape.outer = px * rng.uniform(2.0, 5.0);
  const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double rr = std::sqrt(rng.uniform()) * 0.85;
  const double c = static_cast<double>(cfg.image_size) / 2.0;
  l.shape.cx = c + rr * (a - l.shape.outer) * std::cos(t);
  l.shape.cy = c + rr * (b - l.shape.outer) * std::sin(t);
  return l;
}

/// Cross-section of a lesion on slice z, or nullopt when z is outside its
/// axial extent. Radii taper toward the ends but stay inside the domain's
/// radius band.
inline std::optional<LesionShape> slice_of(const Lesion3d& l, double z, double min_outer) {
  const double dz = std::abs(z - l.z0) / l.half_extent;
  if (dz > 1.0) return std::nullopt;
  LesionShape s = l.shape;
  s.outer = std::max(min_outer, l.shape.outer * (1.0 - 0.35 * dz * dz));
  if (l.irregular) {
    s.tumor = 0.7 * s.outer;
    s.core = std::max(0.0, s.tumor - 3.0 * min_outer / 10.0);
  } else {
    const double px = min_outer / 2.0;
    s.tumor = std::max(s.outer - 1.0 * px, 0.6 * s.outer);
    s.core = s.outer >= 4.0 * px ? s.tumor - 1.5 * px : 0.0;
  }
  return s;
}

}  // namespace synth_detail

/// Deterministic synthetic patient. Intensities are rounded to float32 so
/// that the on-disk float32 volume round-trips exactly.
inline PatientVolume gen_patient(Domain domain, std::uint64_t seed, const GenConfig& cfg) {
  using namespace synth_detail;
  cfg.validate();
  Rng rng(seed);
  const std::size_t size = cfg.image_size;
  const double px = static_cast<double>(size) / 64.0;
  const double c = static_cast<double>(size) / 2.0;
  const double a = 0.42 * static_cast<double>(size) * rng.uniform(0.95, 1.05);
  const double b = 0.37 * static_cast<double>(size) * rng.uniform(0.95, 1.05);
  const double skull_width = 2.5 * px;

  std::vector<Lesion3d> lesions;
  if (domain == Domain::source) {
    lesions.push_back(source_lesion(rng, cfg, a, b));
  } else {
    const std::size_t count = 1 + rng.index(4);
    for (std::size_t attempt = 0; lesions.size() < count && attempt < 200; ++attempt) {
      Lesion3d cand = target_lesion(rng, cfg, a, b);
      bool clear = true;
      for (const Lesion3d& o : lesions) {
        const double d = std::hypot(cand.shape.cx - o.shape.cx, cand.shape.cy - o.shape.cy);
        if (d < cand.shape.outer + o.shape.outer + 3.0 * px) clear = false;
      }
      if (clear) lesions.push_back(cand);
    }
  }
  const double min_outer = (domain == Domain::source ? 10.0 : 2.0) * px;

  PatientVolume vol;
  vol.patient_id = to_string(domain) + "_" + std::to_string(seed);
  vol.domain = domain;
  vol.seed = seed;
  vol.slices.reserve(cfg.slices);

  for (std::size_t z = 0; z < cfg.slices; ++z) {
    const double zc = static_cast<double>(z) + 0.5;
    // Brain cross-section shrinks toward the first and last slices.
    const double scale = 0.85 + 0.15 * std::sin(std::numbers::pi * zc / static_cast<double>(cfg.slices));
    const double sa = a * scale, sb = b * scale;
    std::vector<LesionShape> here;
    for (const Lesion3d& l : lesions) {
      if (auto s = slice_of(l, zc, min_outer)) here.push_back(*s);
    }

    Sample s{Tensor(Shape{kNumChannels, size, size}), LabelMap(size, size)};
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        const double x = static_cast<double>(j) + 0.5, y = static_cast<double>(i) + 0.5;
        const double ex = (x - c) / sa, ey = (y - c) / sb;
        const double rho = std::sqrt(ex * ex + ey * ey);
        const double ring = skull_width / std::min(sa, sb);
        Tissue tissue = Tissue::air;
        std::uint8_t label = kBackground;
        if (rho <= 1.0) {
          tissue = Tissue::brain;
          for (const LesionShape& ls : here) {
            label = std::max(label, lesion_label(ls, x, y));
          }
          switch (label) {
            case kEdema: tissue = Tissue::edema; break;
            case kNecrosis: tissue = Tissue::necrosis; break;
            case kEnhancing: tissue = Tissue::enhancing; break;
            default: break;
          }
        } else if (cfg.skull && rho <= 1.0 + ring) {
          tissue = Tissue::skull;
        }
        s.labels(i, j) = label;
        const auto mean = tissue_intensity(tissue, cfg.contrast_margin);
        for (std::size_t ch = 0; ch < kNumChannels; ++ch) s.image.at(ch, i, j) = mean[ch];
      }
    }
    for (double& v : s.image.data()) {
      v = std::clamp(v + cfg.noise_sigma * rng.normal(), 0.0, 1.0);
      v = static_cast<double>(static_cast<float>(v));
    }
    vol.slices.push_back(std::move(s));
  }
  return vol;
}

}  // namespace metatune
