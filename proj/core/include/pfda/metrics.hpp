#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pfda/volume.hpp"

namespace pfda {

// Per-case evaluation row. Distance metrics are millimeters. precision and
// recall are NaN (with defined=false on the flag) when undefined.
struct CaseMetrics {
  std::string case_id;
  double dice = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double hd = 0.0;
  double hd95 = 0.0;
  double asd = 0.0;
  bool overlap_defined = true;   // precision/recall defined
  bool surface_defined = true;   // hd/hd95/asd defined
};

struct OverlapMetrics {
  double dice, precision, recall;
  bool precision_defined, recall_defined;
};

// Voxel confusion counts; both-empty predicts dice = 1 by convention with
// precision/recall flagged undefined.
OverlapMetrics overlap_metrics(const MaskVolume& pred, const MaskVolume& gt);

// Boundary = foreground voxel with at least one background 6-neighbor,
// out-of-grid counting as background.
std::vector<Index3> boundary_voxels(const MaskVolume& m);

// Directed distances between boundary voxel centers, Euclidean in physical
// millimeters. Both masks must be non-empty and share spacing.
struct SurfaceDistances {
  std::vector<double> a_to_b;
  std::vector<double> b_to_a;
};
SurfaceDistances surface_distances(const MaskVolume& a, const MaskVolume& b);

// Pooled over both directed multisets: max / 95th percentile (linear
// interpolation between order statistics) / mean.
double hd(const SurfaceDistances& d);
double hd95(const SurfaceDistances& d);
double asd(const SurfaceDistances& d);
double hd(const MaskVolume& a, const MaskVolume& b);
double hd95(const MaskVolume& a, const MaskVolume& b);
double asd(const MaskVolume& a, const MaskVolume& b);

// Percentile with linear interpolation at rank q*(n-1); input need not be
// sorted. q in [0, 1].
double percentile(std::vector<double> values, double q);

// Lightweight mask-feature subset for the downstream-consistency analysis.
struct MaskFeatures {
  double voxel_volume;   // mm^3
  double surface_area;   // mm^2, exposed-face counting
  double sphericity;     // pi^(1/3) (6V)^(2/3) / A
  double energy;         // sum of squared intensities over the mask
};
MaskFeatures mask_features(const Volume& v, const MaskVolume& m);

std::vector<std::string> mask_feature_names();
double mask_feature_value(const MaskFeatures& f, const std::string& name);

CaseMetrics case_metrics(const std::string& case_id, const MaskVolume& pred,
                         const MaskVolume& gt);

}  // namespace pfda
