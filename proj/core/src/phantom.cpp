#include "pfda/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "pfda/rng.hpp"

namespace pfda {

void SiteParams::validate() const {
  require(intensity_gain > 0.0, ErrorKind::Config,
          "SiteParams: intensity_gain must be > 0");
  require(noise_sigma >= 0.0, ErrorKind::Config,
          "SiteParams: noise_sigma must be >= 0");
  require(blur_sigma >= 0.0, ErrorKind::Config,
          "SiteParams: blur_sigma must be >= 0");
  require(std::isfinite(intensity_offset), ErrorKind::Config,
          "SiteParams: intensity_offset must be finite");
}

namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}

// Rotation matrix from a uniformly random unit quaternion (rows).
std::array<Vec3, 3> random_rotation(Rng& rng) {
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  constexpr double two_pi = 6.283185307179586476925286766559;
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double qx = a * std::sin(two_pi * u2), qy = a * std::cos(two_pi * u2);
  const double qz = b * std::sin(two_pi * u3), qw = b * std::cos(two_pi * u3);
  return {Vec3{1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw),
               2 * (qx * qz + qy * qw)},
          Vec3{2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz),
               2 * (qy * qz - qx * qw)},
          Vec3{2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw),
               1 - 2 * (qx * qx + qy * qy)}};
}

// Distance from point p to segment [a, a + L*d], d unit.
double segment_distance(const Vec3& p, const Vec3& a, const Vec3& d,
                        double len) {
  const Vec3 ap = sub(p, a);
  const double t = std::clamp(dot(ap, d), 0.0, len);
  const Vec3 q{a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]};
  const Vec3 r = sub(p, q);
  return norm(r);
}

MaskVolume make_anatomy_mask(std::uint64_t seed, std::size_t side,
                             const Spacing3& spacing) {
  Rng rng(stream_seed(seed, "mask"));
  const double s = static_cast<double>(side);

  // Femoral-head-like capped ellipsoid, upper part of the grid.
  const Vec3 center{s * rng.uniform(0.26, 0.36), s * rng.uniform(0.40, 0.60),
                    s * rng.uniform(0.40, 0.60)};
  const Vec3 semi{s * rng.uniform(0.16, 0.22), s * rng.uniform(0.15, 0.21),
                  s * rng.uniform(0.15, 0.21)};
  const auto rot = random_rotation(rng);

  // Shaft: cylinder from the head center toward the lower grid face.
  const Vec3 shaft_dir = normalized(
      {1.0, rng.uniform(-0.22, 0.22), rng.uniform(-0.22, 0.22)});
  const double shaft_len = (0.88 * s - center[0]) / shaft_dir[0];
  const double shaft_radius = s * rng.uniform(0.085, 0.120);

  // Cap plane: cuts the far side of the head away from the shaft.
  const Vec3 cap_n{-shaft_dir[0], -shaft_dir[1], -shaft_dir[2]};
  const double cap_dist =
      rng.uniform(0.45, 0.80) * std::max({semi[0], semi[1], semi[2]});

  MaskVolume m = MaskVolume::zeros({side, side, side}, spacing);
  for (std::size_t z = 0; z < side; ++z)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const Vec3 p{static_cast<double>(z), static_cast<double>(y),
                     static_cast<double>(x)};
        const Vec3 rel = sub(p, center);
        const Vec3 q{dot(rot[0], rel), dot(rot[1], rel), dot(rot[2], rel)};
        const double e = q[0] * q[0] / (semi[0] * semi[0]) +
                         q[1] * q[1] / (semi[1] * semi[1]) +
                         q[2] * q[2] / (semi[2] * semi[2]);
        const bool in_head = e <= 1.0 && dot(rel, cap_n) <= cap_dist;
        const bool in_shaft =
            segment_distance(p, center, shaft_dir, shaft_len) <= shaft_radius;
        if (in_head || in_shaft) m.at(z, y, x) = 1;
      }
  return m;
}

// 6-neighborhood erosion, out-of-grid treated as background.
MaskVolume erode6(const MaskVolume& m, int iterations) {
  MaskVolume cur = m;
  const auto [D, H, W] = m.shape;
  for (int it = 0; it < iterations; ++it) {
    MaskVolume next = cur;
    for (std::size_t z = 0; z < D; ++z)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          if (!cur.at(z, y, x)) continue;
          const bool interior =
              z > 0 && z + 1 < D && y > 0 && y + 1 < H && x > 0 && x + 1 < W &&
              cur.at(z - 1, y, x) && cur.at(z + 1, y, x) &&
              cur.at(z, y - 1, x) && cur.at(z, y + 1, x) &&
              cur.at(z, y, x - 1) && cur.at(z, y, x + 1);
          if (!interior) next.at(z, y, x) = 0;
        }
    cur = std::move(next);
  }
  return cur;
}

// Low-frequency multiplicative field: white noise on a coarse lattice,
// trilinearly interpolated up to the full grid.
std::vector<float> texture_field(std::uint64_t seed, std::size_t side,
                                 double amplitude) {
  Rng rng(stream_seed(seed, "texture"));
  const std::size_t coarse = std::max<std::size_t>(2, side / 6);
  std::vector<double> lattice(coarse * coarse * coarse);
  for (double& v : lattice) v = rng.uniform(-1.0, 1.0);
  auto lat = [&](std::size_t z, std::size_t y, std::size_t x) {
    return lattice[(z * coarse + y) * coarse + x];
  };
  std::vector<float> out(side * side * side);
  const double scale =
      static_cast<double>(coarse - 1) / static_cast<double>(side - 1);
  std::size_t i = 0;
  for (std::size_t z = 0; z < side; ++z)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x, ++i) {
        const double fz = z * scale, fy = y * scale, fx = x * scale;
        const std::size_t z0 = std::min<std::size_t>(coarse - 2, fz);
        const std::size_t y0 = std::min<std::size_t>(coarse - 2, fy);
        const std::size_t x0 = std::min<std::size_t>(coarse - 2, fx);
        const double tz = fz - z0, ty = fy - y0, tx = fx - x0;
        double v = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              v += lat(z0 + dz, y0 + dy, x0 + dx) * (dz ? tz : 1 - tz) *
                   (dy ? ty : 1 - ty) * (dx ? tx : 1 - tx);
        out[i] = static_cast<float>(1.0 + amplitude * v);
      }
  return out;
}

// Separable Gaussian blur with replicated borders; sigma in voxels.
void gaussian_blur_inplace(std::vector<float>& v, std::size_t side,
                           double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i / sigma) * (i / sigma));
    ksum += kernel[i + radius];
  }
  for (double& k : kernel) k /= ksum;

  const std::size_t n = side;
  std::vector<float> tmp(v.size());
  // Strides per axis pass: z, then y, then x.
  const std::array<std::array<std::size_t, 3>, 3> orders = {
      std::array<std::size_t, 3>{n * n, n, 1},   // vary z
      std::array<std::size_t, 3>{n, n * n, 1},   // vary y
      std::array<std::size_t, 3>{1, n * n, n}};  // vary x
  for (const auto& ord : orders) {
    const std::size_t axis_stride = ord[0], s1 = ord[1], s2 = ord[2];
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t base = a * s1 + b * s2;
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int k = -radius; k <= radius; ++k) {
            const std::int64_t j = std::clamp<std::int64_t>(
                static_cast<std::int64_t>(i) + k, 0,
                static_cast<std::int64_t>(n) - 1);
            acc += kernel[k + radius] * v[base + j * axis_stride];
          }
          tmp[base + i * axis_stride] = static_cast<float>(acc);
        }
      }
    v.swap(tmp);
  }
}

constexpr double kBackgroundLevel = 60.0;
constexpr double kTrabecularLevel = 180.0;
constexpr double kCorticalLevel = 420.0;
constexpr double kTextureAmplitude = 0.25;
constexpr int kShellThickness = 2;
constexpr Spacing3 kPhantomSpacing{1.25, 0.875, 0.875};

}  // namespace

std::pair<Volume, MaskVolume> synth_phantom(std::uint64_t seed,
                                            const SiteParams& site,
                                            std::size_t side) {
  require(side >= 16, ErrorKind::Config,
          "synth_phantom: side must be >= 16 (got " + std::to_string(side) +
              ")");
  site.validate();

  MaskVolume mask = make_anatomy_mask(seed, side, kPhantomSpacing);
  const MaskVolume interior = erode6(mask, kShellThickness);
  const std::vector<float> tex =
      texture_field(seed, side, kTextureAmplitude);

  Volume vol = Volume::zeros({side, side, side}, kPhantomSpacing);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    if (!mask.data[i]) {
      vol.data[i] = static_cast<float>(kBackgroundLevel);
    } else if (interior.data[i]) {
      vol.data[i] = static_cast<float>(kTrabecularLevel * tex[i]);
    } else {
      vol.data[i] = static_cast<float>(kCorticalLevel);
    }
  }

  gaussian_blur_inplace(vol.data, side, site.blur_sigma);

  Rng noise_rng(stream_seed(seed, "noise"));
  for (float& v : vol.data) {
    double out = v * site.intensity_gain + site.intensity_offset;
    if (site.noise_sigma > 0.0) out += noise_rng.normal(0.0, site.noise_sigma);
    v = static_cast<float>(out);
  }
  return {std::move(vol), std::move(mask)};
}

namespace {

std::string case_name(const std::string& site, const std::string& split,
                      std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%s_%03zu", split.c_str(), k);
  return site + buf;
}

std::uint64_t case_seed(const PhantomDatasetSpec& spec,
                        const std::string& split, std::size_t k) {
  return spec.base_seed + (split == "val" ? 100000 : 0) + k;
}

}  // namespace

DatasetManifest phantom_manifest(const PhantomDatasetSpec& spec) {
  DatasetManifest m;
  const std::array<std::string, 2> sites{spec.source_name, spec.target_name};
  for (const auto& site : sites) {
    for (std::size_t k = 0; k < spec.train_per_site; ++k)
      m.cases.push_back({case_name(site, "train", k), site, "train"});
    for (std::size_t k = 0; k < spec.val_per_site; ++k)
      m.cases.push_back({case_name(site, "val", k), site, "val"});
  }
  return m;
}

std::pair<Volume, MaskVolume> phantom_case(const PhantomDatasetSpec& spec,
                                           int site_index,
                                           const std::string& split,
                                           std::size_t case_index) {
  const SiteParams& site = site_index == 0 ? spec.source : spec.target;
  return synth_phantom(case_seed(spec, split, case_index), site, spec.side);
}

DatasetManifest generate_phantom_dataset(const PhantomDatasetSpec& spec,
                                         const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const DatasetManifest manifest = phantom_manifest(spec);
  for (const auto& rec : manifest.cases) {
    const int site_index = rec.site == spec.source_name ? 0 : 1;
    // Recover the per-split index from the trailing digits of the case id.
    const std::size_t k = std::stoul(rec.case_id.substr(rec.case_id.rfind('_') + 1));
    auto [vol, mask] = phantom_case(spec, site_index, rec.split, k);
    const fs::path dir = case_dir(root, rec);
    fs::create_directories(dir);
    save_volume(vol, dir / "volume.pfda");
    save_mask(mask, dir / "mask.pfda");
  }
  manifest.save(root / "manifest.csv");
  return manifest;
}

}  // namespace pfda
