#include "pfda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pfda {

OverlapMetrics overlap_metrics(const MaskVolume& pred, const MaskVolume& gt) {
  require(pred.shape == gt.shape, ErrorKind::Shape,
          "overlap_metrics: shape mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  OverlapMetrics m{};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (tp + fp + fn == 0) {  // both empty
    m.dice = 1.0;
    m.precision = nan;
    m.recall = nan;
    m.precision_defined = m.recall_defined = false;
    return m;
  }
  m.dice = 2.0 * static_cast<double>(tp) /
           static_cast<double>(2 * tp + fp + fn);
  m.precision_defined = tp + fp > 0;
  m.recall_defined = tp + fn > 0;
  m.precision = m.precision_defined
                    ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                    : nan;
  m.recall = m.recall_defined
                 ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                 : nan;
  return m;
}

std::vector<Index3> boundary_voxels(const MaskVolume& m) {
  std::vector<Index3> out;
  const auto [D, H, W] = m.shape;
  for (std::size_t z = 0; z < D; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        if (!m.at(z, y, x)) continue;
        const bool surface =
            z == 0 || z + 1 == D || y == 0 || y + 1 == H || x == 0 ||
            x + 1 == W || !m.at(z - 1, y, x) || !m.at(z + 1, y, x) ||
            !m.at(z, y - 1, x) || !m.at(z, y + 1, x) || !m.at(z, y, x - 1) ||
            !m.at(z, y, x + 1);
        if (surface) out.push_back({z, y, x});
      }
  return out;
}

namespace {

// Squared physical distance between voxel centers, accumulated in fixed
// z,y,x order so optimized and brute-force paths agree bit-for-bit.
inline double sq_dist(const Index3& a, const Index3& b, const Spacing3& sp) {
  const double dz = (static_cast<double>(a[0]) - static_cast<double>(b[0])) *
                    sp[0];
  const double dy = (static_cast<double>(a[1]) - static_cast<double>(b[1])) *
                    sp[1];
  const double dx = (static_cast<double>(a[2]) - static_cast<double>(b[2])) *
                    sp[2];
  return dz * dz + dy * dy + dx * dx;
}

// Exact nearest-neighbor KD-tree over boundary voxels with anisotropic
// spacing. Split planes live in physical coordinates; leaf distances reuse
// sq_dist so results match the all-pairs reference exactly.
class BoundaryKdTree {
 public:
  BoundaryKdTree(std::vector<Index3> points, const Spacing3& spacing)
      : pts_(std::move(points)), sp_(spacing) {
    idx_.resize(pts_.size());
    std::iota(idx_.begin(), idx_.end(), std::size_t{0});
    nodes_.reserve(2 * pts_.size());
    root_ = build(0, pts_.size(), 0);
  }

  double nearest_sq(const Index3& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(root_, q, best);
    return best;
  }

 private:
  struct KdNode {
    std::size_t point;
    int axis;
    std::int64_t left = -1, right = -1;
  };

  double coord(std::size_t pi, int axis) const {
    return static_cast<double>(pts_[pi][axis]) * sp_[axis];
  }

  std::int64_t build(std::size_t lo, std::size_t hi, int axis) {
    if (lo >= hi) return -1;
    const std::size_t mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](std::size_t a, std::size_t b) {
                       return coord(a, axis) < coord(b, axis);
                     });
    KdNode node;
    node.point = idx_[mid];
    node.axis = axis;
    const std::int64_t self = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(node);
    const int next = (axis + 1) % 3;
    const std::int64_t l = build(lo, mid, next);
    const std::int64_t r = build(mid + 1, hi, next);
    nodes_[self].left = l;
    nodes_[self].right = r;
    return self;
  }

  void search(std::int64_t ni, const Index3& q, double& best) const {
    if (ni < 0) return;
    const KdNode& node = nodes_[ni];
    best = std::min(best, sq_dist(q, pts_[node.point], sp_));
    const double qc = static_cast<double>(q[node.axis]) * sp_[node.axis];
    const double pc = coord(node.point, node.axis);
    const std::int64_t near = qc < pc ? node.left : node.right;
    const std::int64_t far = qc < pc ? node.right : node.left;
    search(near, q, best);
    // Per-axis term computed exactly like sq_dist's axis contribution.
    const double da = (static_cast<double>(q[node.axis]) -
                       static_cast<double>(pts_[node.point][node.axis])) *
                      sp_[node.axis];
    if (da * da <= best) search(far, q, best);
  }

  std::vector<Index3> pts_;
  Spacing3 sp_;
  std::vector<std::size_t> idx_;
  std::vector<KdNode> nodes_;
  std::int64_t root_ = -1;
};

std::vector<double> directed_distances(const std::vector<Index3>& from,
                                       const BoundaryKdTree& to_tree) {
  std::vector<double> out(from.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(from.size()); ++i)
    out[i] = std::sqrt(to_tree.nearest_sq(from[i]));
  return out;
}

}  // namespace

SurfaceDistances surface_distances(const MaskVolume& a, const MaskVolume& b) {
  require(a.shape == b.shape, ErrorKind::Shape,
          "surface_distances: shape mismatch");
  require(a.spacing == b.spacing, ErrorKind::Shape,
          "surface_distances: spacing mismatch");
  auto ba = boundary_voxels(a);
  auto bb = boundary_voxels(b);
  require(!ba.empty() && !bb.empty(), ErrorKind::Undefined,
          "surface_distances: surface undefined for an empty mask");
  BoundaryKdTree tree_a(ba, a.spacing);
  BoundaryKdTree tree_b(bb, a.spacing);
  SurfaceDistances d;
  d.a_to_b = directed_distances(ba, tree_b);
  d.b_to_a = directed_distances(bb, tree_a);
  return d;
}

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorKind::Undefined, "percentile: empty input");
  require(q >= 0.0 && q <= 1.0, ErrorKind::Config,
          "percentile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const std::size_t k = static_cast<std::size_t>(rank);
  const double frac = rank - static_cast<double>(k);
  if (k + 1 >= values.size()) return values.back();
  return values[k] + frac * (values[k + 1] - values[k]);
}

namespace {

std::vector<double> pooled(const SurfaceDistances& d) {
  std::vector<double> all(d.a_to_b);
  all.insert(all.end(), d.b_to_a.begin(), d.b_to_a.end());
  return all;
}

}  // namespace

double hd(const SurfaceDistances& d) {
  const auto all = pooled(d);
  return *std::max_element(all.begin(), all.end());
}

double hd95(const SurfaceDistances& d) { return percentile(pooled(d), 0.95); }

double asd(const SurfaceDistances& d) {
  const auto all = pooled(d);
  return std::accumulate(all.begin(), all.end(), 0.0) /
         static_cast<double>(all.size());
}

double hd(const MaskVolume& a, const MaskVolume& b) {
  return hd(surface_distances(a, b));
}
double hd95(const MaskVolume& a, const MaskVolume& b) {
  return hd95(surface_distances(a, b));
}
double asd(const MaskVolume& a, const MaskVolume& b) {
  return asd(surface_distances(a, b));
}

MaskFeatures mask_features(const Volume& v, const MaskVolume& m) {
  require(v.shape == m.shape, ErrorKind::Shape,
          "mask_features: volume/mask shape mismatch");
  const std::size_t count = m.foreground_count();
  require(count > 0, ErrorKind::Undefined,
          "mask_features: empty mask");
  const auto [D, H, W] = m.shape;
  const double sz = m.spacing[0], sy = m.spacing[1], sx = m.spacing[2];
  const double face_z = sy * sx;  // face perpendicular to z
  const double face_y = sz * sx;
  const double face_x = sz * sy;

  double area = 0.0, energy = 0.0;
  for (std::size_t z = 0; z < D; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        if (!m.at(z, y, x)) continue;
        const double val = v.at(z, y, x);
        energy += val * val;
        if (z == 0 || !m.at(z - 1, y, x)) area += face_z;
        if (z + 1 == D || !m.at(z + 1, y, x)) area += face_z;
        if (y == 0 || !m.at(z, y - 1, x)) area += face_y;
        if (y + 1 == H || !m.at(z, y + 1, x)) area += face_y;
        if (x == 0 || !m.at(z, y, x - 1)) area += face_x;
        if (x + 1 == W || !m.at(z, y, x + 1)) area += face_x;
      }

  MaskFeatures f{};
  f.voxel_volume = static_cast<double>(count) * sz * sy * sx;
  f.surface_area = area;
  f.sphericity = std::cbrt(M_PI) * std::pow(6.0 * f.voxel_volume, 2.0 / 3.0) /
                 area;
  f.energy = energy;
  return f;
}

std::vector<std::string> mask_feature_names() {
  return {"voxel_volume", "surface_area", "sphericity", "energy"};
}

double mask_feature_value(const MaskFeatures& f, const std::string& name) {
  if (name == "voxel_volume") return f.voxel_volume;
  if (name == "surface_area") return f.surface_area;
  if (name == "sphericity") return f.sphericity;
  if (name == "energy") return f.energy;
  fail(ErrorKind::Config, "unknown mask feature '" + name + "'");
}

CaseMetrics case_metrics(const std::string& case_id, const MaskVolume& pred,
                         const MaskVolume& gt) {
  CaseMetrics cm;
  cm.case_id = case_id;
  const OverlapMetrics om = overlap_metrics(pred, gt);
  cm.dice = om.dice;
  cm.precision = om.precision;
  cm.recall = om.recall;
  cm.overlap_defined = om.precision_defined && om.recall_defined;
  try {
    const SurfaceDistances sd = surface_distances(pred, gt);
    cm.hd = hd(sd);
    cm.hd95 = hd95(sd);
    cm.asd = asd(sd);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Undefined) throw;
    cm.surface_defined = false;
    cm.hd = cm.hd95 = cm.asd = std::numeric_limits<double>::quiet_NaN();
  }
  return cm;
}

}  // namespace pfda
