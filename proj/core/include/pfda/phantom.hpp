#pragma once

#include <cstdint>
#include <filesystem>

#include "pfda/volume.hpp"

namespace pfda {

// Per-site intensity transform; models acquisition differences between
// scanners as a controllable shift. The anatomy (mask) never depends on it.
struct SiteParams {
  double intensity_gain = 1.0;   // > 0
  double intensity_offset = 0.0;
  double noise_sigma = 0.0;      // >= 0, HU-like units
  double blur_sigma = 0.0;       // >= 0, voxels

  void validate() const;
  static SiteParams identity() { return {}; }
};

// Deterministic synthetic femur-like phantom: a capped-ellipsoid head joined
// to a cylindrical shaft, bright cortical shell, trabecular texture inside.
// The mask depends only on (seed, side); site params shape intensities only.
std::pair<Volume, MaskVolume> synth_phantom(std::uint64_t seed,
                                            const SiteParams& site,
                                            std::size_t side);

// Writes a two-site dataset under root: <root>/<site>/<case_id>/*.pfda plus
// manifest.csv. Case k uses phantom seed base_seed + k for both sites so the
// domain shift is intensity-only. Returns the manifest.
struct PhantomDatasetSpec {
  std::size_t train_per_site = 40;
  std::size_t val_per_site = 20;
  std::uint64_t base_seed = 1;
  std::size_t side = 48;
  SiteParams source;
  SiteParams target;
  std::string source_name = "source";
  std::string target_name = "target";
};

DatasetManifest generate_phantom_dataset(const PhantomDatasetSpec& spec,
                                         const std::filesystem::path& root);

// In-memory variant used by the training harness; indexing mirrors the
// on-disk layout. site_index: 0 = source, 1 = target.
std::pair<Volume, MaskVolume> phantom_case(const PhantomDatasetSpec& spec,
                                           int site_index,
                                           const std::string& split,
                                           std::size_t case_index);
DatasetManifest phantom_manifest(const PhantomDatasetSpec& spec);

}  // namespace pfda
