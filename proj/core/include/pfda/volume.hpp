#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pfda/error.hpp"

namespace pfda {

using Index3 = std::array<std::size_t, 3>;     // (z, y, x) order
using Spacing3 = std::array<double, 3>;        // (sz, sy, sx) mm per voxel

// 3-D scalar intensity grid. Intensities are stored as 32-bit floats, the
// unit of all file I/O; training promotes to double at batch assembly.
struct Volume {
  Index3 shape{0, 0, 0};                       // (D, H, W)
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::vector<float> data;                     // z-major (D outermost)

  std::size_t size() const { return shape[0] * shape[1] * shape[2]; }
  std::size_t offset(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * shape[1] + y) * shape[2] + x;
  }
  float& at(std::size_t z, std::size_t y, std::size_t x) {
    return data[offset(z, y, x)];
  }
  float at(std::size_t z, std::size_t y, std::size_t x) const {
    return data[offset(z, y, x)];
  }

  static Volume zeros(Index3 shape, Spacing3 spacing = {1.0, 1.0, 1.0});
  void validate() const;
};

// Binary grid aligned to a Volume; values are exactly 0 or 1.
struct MaskVolume {
  Index3 shape{0, 0, 0};
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> data;

  std::size_t size() const { return shape[0] * shape[1] * shape[2]; }
  std::size_t offset(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * shape[1] + y) * shape[2] + x;
  }
  std::uint8_t& at(std::size_t z, std::size_t y, std::size_t x) {
    return data[offset(z, y, x)];
  }
  std::uint8_t at(std::size_t z, std::size_t y, std::size_t x) const {
    return data[offset(z, y, x)];
  }

  std::size_t foreground_count() const;
  static MaskVolume zeros(Index3 shape, Spacing3 spacing = {1.0, 1.0, 1.0});
  void validate() const;
};

struct CropBox {
  Index3 origin{0, 0, 0};  // (z, y, x)
  Index3 size{1, 1, 1};    // (dz, dy, dx)
};

// Copies the boxed region; no resampling, spacing preserved.
std::pair<Volume, MaskVolume> crop_roi(const Volume& v, const MaskVolume& m,
                                       const CropBox& box);

// Pads (zeros, symmetric; odd remainder to the trailing side) or center-crops
// (odd excess removed from the trailing side) every axis to length `side`.
Volume standardize_cube(const Volume& v, std::size_t side);
MaskVolume standardize_cube(const MaskVolume& m, std::size_t side);

// PFDA container: magic "PFDA", version u32=1, dtype u8 (1=f32, 2=u8 mask),
// shape u32 x3 (D,H,W), spacing f64 x3 (sz,sy,sx), raw z-major payload;
// little-endian throughout.
void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);
void save_mask(const MaskVolume& m, const std::filesystem::path& path);
MaskVolume load_mask(const std::filesystem::path& path);

// Dataset directory layout: <root>/<site>/<case_id>/{volume,mask}.pfda and a
// manifest.csv with columns case_id,site,split.
struct CaseRecord {
  std::string case_id;
  std::string site;
  std::string split;  // "train" | "val"
};

struct DatasetManifest {
  std::vector<CaseRecord> cases;

  std::vector<CaseRecord> select(const std::string& site,
                                 const std::string& split) const;
  std::vector<std::string> sites() const;
  void save(const std::filesystem::path& csv_path) const;
  static DatasetManifest load(const std::filesystem::path& csv_path);
};

std::filesystem::path case_dir(const std::filesystem::path& root,
                               const CaseRecord& rec);

}  // namespace pfda
