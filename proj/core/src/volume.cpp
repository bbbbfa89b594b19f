#include "pfda/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace pfda {

static_assert(std::endian::native == std::endian::little,
              "pfda container I/O assumes a little-endian host");

Volume Volume::zeros(Index3 shape, Spacing3 spacing) {
  Volume v;
  v.shape = shape;
  v.spacing = spacing;
  v.data.assign(v.size(), 0.0f);
  return v;
}

void Volume::validate() const {
  require(shape[0] >= 1 && shape[1] >= 1 && shape[2] >= 1,
          ErrorKind::Invariant, "Volume: all dims must be >= 1");
  require(data.size() == size(), ErrorKind::Invariant,
          "Volume: payload size does not match shape");
  for (double s : spacing)
    require(s > 0.0 && std::isfinite(s), ErrorKind::Invariant,
            "Volume: spacing components must be > 0");
  for (float v : data)
    require(std::isfinite(v), ErrorKind::Invariant,
            "Volume: non-finite intensity");
}

MaskVolume MaskVolume::zeros(Index3 shape, Spacing3 spacing) {
  MaskVolume m;
  m.shape = shape;
  m.spacing = spacing;
  m.data.assign(m.size(), 0);
  return m;
}

std::size_t MaskVolume::foreground_count() const {
  return static_cast<std::size_t>(
      std::count(data.begin(), data.end(), std::uint8_t{1}));
}

void MaskVolume::validate() const {
  require(shape[0] >= 1 && shape[1] >= 1 && shape[2] >= 1,
          ErrorKind::Invariant, "MaskVolume: all dims must be >= 1");
  require(data.size() == size(), ErrorKind::Invariant,
          "MaskVolume: payload size does not match shape");
  for (double s : spacing)
    require(s > 0.0 && std::isfinite(s), ErrorKind::Invariant,
            "MaskVolume: spacing components must be > 0");
  for (std::uint8_t v : data)
    require(v == 0 || v == 1, ErrorKind::Invariant,
            "MaskVolume: values must be exactly 0 or 1");
}

namespace {

const char* axis_name(std::size_t axis) {
  static const char* names[3] = {"z", "y", "x"};
  return names[axis];
}

void check_box(const CropBox& box, const Index3& shape) {
  for (std::size_t a = 0; a < 3; ++a) {
    require(box.size[a] >= 1, ErrorKind::Bounds,
            std::string("crop_roi: size must be >= 1 on axis ") + axis_name(a));
    require(box.origin[a] + box.size[a] <= shape[a], ErrorKind::Bounds,
            std::string("crop_roi: box exceeds volume on axis ") +
                axis_name(a) + " (origin " + std::to_string(box.origin[a]) +
                " + size " + std::to_string(box.size[a]) + " > " +
                std::to_string(shape[a]) + ")");
  }
}

template <typename Grid>
Grid crop_grid(const Grid& g, const CropBox& box) {
  Grid out;
  out.shape = box.size;
  out.spacing = g.spacing;
  out.data.resize(out.size());
  for (std::size_t z = 0; z < box.size[0]; ++z)
    for (std::size_t y = 0; y < box.size[1]; ++y) {
      const std::size_t src =
          g.offset(box.origin[0] + z, box.origin[1] + y, box.origin[2]);
      const std::size_t dst = out.offset(z, y, 0);
      std::copy(g.data.begin() + src, g.data.begin() + src + box.size[2],
                out.data.begin() + dst);
    }
  return out;
}

// Per-axis mapping for pad/crop to a fixed side. For padding the extra voxel
// goes to the trailing side; for cropping the extra removed voxel comes from
// the trailing side.
struct AxisFit {
  std::size_t src_start;  // first source index used
  std::size_t dst_start;  // where it lands in the output
  std::size_t count;      // copied run length
};

AxisFit fit_axis(std::size_t n, std::size_t side) {
  AxisFit f{};
  if (n >= side) {
    f.src_start = (n - side) / 2;  // floor: trailing side loses the odd voxel
    f.dst_start = 0;
    f.count = side;
  } else {
    f.src_start = 0;
    f.dst_start = (side - n) / 2;  // floor: trailing side gains the odd voxel
    f.count = n;
  }
  return f;
}

template <typename Grid>
Grid standardize_grid(const Grid& g, std::size_t side) {
  require(side >= 1, ErrorKind::Config, "standardize_cube: side must be >= 1");
  Grid out;
  out.shape = {side, side, side};
  out.spacing = g.spacing;
  out.data.assign(side * side * side, typename decltype(out.data)::value_type{0});
  const AxisFit fz = fit_axis(g.shape[0], side);
  const AxisFit fy = fit_axis(g.shape[1], side);
  const AxisFit fx = fit_axis(g.shape[2], side);
  for (std::size_t z = 0; z < fz.count; ++z)
    for (std::size_t y = 0; y < fy.count; ++y) {
      const std::size_t src =
          g.offset(fz.src_start + z, fy.src_start + y, fx.src_start);
      const std::size_t dst =
          out.offset(fz.dst_start + z, fy.dst_start + y, fx.dst_start);
      std::copy(g.data.begin() + src, g.data.begin() + src + fx.count,
                out.data.begin() + dst);
    }
  return out;
}

}  // namespace

std::pair<Volume, MaskVolume> crop_roi(const Volume& v, const MaskVolume& m,
                                       const CropBox& box) {
  require(v.shape == m.shape, ErrorKind::Shape,
          "crop_roi: volume and mask shapes differ");
  check_box(box, v.shape);
  return {crop_grid(v, box), crop_grid(m, box)};
}

Volume standardize_cube(const Volume& v, std::size_t side) {
  return standardize_grid(v, side);
}

MaskVolume standardize_cube(const MaskVolume& m, std::size_t side) {
  return standardize_grid(m, side);
}

// ---- container I/O ----

namespace {

constexpr char kMagic[4] = {'P', 'F', 'D', 'A'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeU8 = 2;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(is), ErrorKind::Format,
          std::string("pfda container: truncated ") + what);
  return v;
}

struct Header {
  std::uint8_t dtype;
  Index3 shape;
  Spacing3 spacing;
};

void write_header(std::ostream& os, std::uint8_t dtype, const Index3& shape,
                  const Spacing3& spacing) {
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, dtype);
  for (std::size_t d : shape) write_pod(os, static_cast<std::uint32_t>(d));
  for (double s : spacing) write_pod(os, s);
}

Header read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  is.read(magic, 4);
  require(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0,
          ErrorKind::Format,
          "pfda container: bad magic in " + path.string());
  const auto version = read_pod<std::uint32_t>(is, "version");
  require(version == kVersion, ErrorKind::Format,
          "pfda container: unsupported version " + std::to_string(version));
  Header h{};
  h.dtype = read_pod<std::uint8_t>(is, "dtype");
  require(h.dtype == kDtypeF32 || h.dtype == kDtypeU8, ErrorKind::Format,
          "pfda container: unknown dtype code " + std::to_string(h.dtype));
  for (std::size_t a = 0; a < 3; ++a)
    h.shape[a] = read_pod<std::uint32_t>(is, "shape");
  for (std::size_t a = 0; a < 3; ++a)
    h.spacing[a] = read_pod<double>(is, "spacing");
  return h;
}

template <typename T>
void read_payload(std::istream& is, std::vector<T>& out, std::size_t count,
                  const std::filesystem::path& path) {
  out.resize(count);
  is.read(reinterpret_cast<char*>(out.data()),
          static_cast<std::streamsize>(count * sizeof(T)));
  require(is.gcount() == static_cast<std::streamsize>(count * sizeof(T)),
          ErrorKind::Format,
          "pfda container: payload shorter than header shape in " +
              path.string());
  char extra;
  is.read(&extra, 1);
  require(is.eof(), ErrorKind::Format,
          "pfda container: trailing bytes after payload in " + path.string());
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(os.is_open(), ErrorKind::Io,
          "cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.is_open(), ErrorKind::Io,
          "cannot open for reading: " + path.string());
  return is;
}

}  // namespace

void save_volume(const Volume& v, const std::filesystem::path& path) {
  v.validate();
  auto os = open_out(path);
  write_header(os, kDtypeF32, v.shape, v.spacing);
  os.write(reinterpret_cast<const char*>(v.data.data()),
           static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  require(static_cast<bool>(os), ErrorKind::Io,
          "write failed: " + path.string());
}

Volume load_volume(const std::filesystem::path& path) {
  auto is = open_in(path);
  const Header h = read_header(is, path);
  require(h.dtype == kDtypeF32, ErrorKind::Format,
          "load_volume: " + path.string() + " holds a mask, not a volume");
  Volume v;
  v.shape = h.shape;
  v.spacing = h.spacing;
  read_payload(is, v.data, v.size(), path);
  v.validate();
  return v;
}

void save_mask(const MaskVolume& m, const std::filesystem::path& path) {
  m.validate();
  auto os = open_out(path);
  write_header(os, kDtypeU8, m.shape, m.spacing);
  os.write(reinterpret_cast<const char*>(m.data.data()),
           static_cast<std::streamsize>(m.data.size()));
  require(static_cast<bool>(os), ErrorKind::Io,
          "write failed: " + path.string());
}

MaskVolume load_mask(const std::filesystem::path& path) {
  auto is = open_in(path);
  const Header h = read_header(is, path);
  require(h.dtype == kDtypeU8, ErrorKind::Format,
          "load_mask: " + path.string() + " holds a volume, not a mask");
  MaskVolume m;
  m.shape = h.shape;
  m.spacing = h.spacing;
  read_payload(is, m.data, m.size(), path);
  m.validate();
  return m;
}

// ---- manifest ----

std::vector<CaseRecord> DatasetManifest::select(const std::string& site,
                                                const std::string& split) const {
  std::vector<CaseRecord> out;
  for (const auto& c : cases)
    if (c.site == site && c.split == split) out.push_back(c);
  return out;
}

std::vector<std::string> DatasetManifest::sites() const {
  std::set<std::string> s;
  for (const auto& c : cases) s.insert(c.site);
  return {s.begin(), s.end()};
}

void DatasetManifest::save(const std::filesystem::path& csv_path) const {
  auto os = open_out(csv_path);
  os << "case_id,site,split\n";
  for (const auto& c : cases)
    os << c.case_id << "," << c.site << "," << c.split << "\n";
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& csv_path) {
  auto is = open_in(csv_path);
  DatasetManifest m;
  std::string line;
  std::getline(is, line);
  require(line == "case_id,site,split", ErrorKind::Format,
          "manifest.csv: unexpected header '" + line + "'");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CaseRecord rec;
    std::getline(ls, rec.case_id, ',');
    std::getline(ls, rec.site, ',');
    std::getline(ls, rec.split, ',');
    require(!rec.case_id.empty() && !rec.site.empty() && !rec.split.empty(),
            ErrorKind::Format, "manifest.csv: malformed row '" + line + "'");
    m.cases.push_back(std::move(rec));
  }
  return m;
}

std::filesystem::path case_dir(const std::filesystem::path& root,
                               const CaseRecord& rec) {
  return root / rec.site / rec.case_id;
}

}  // namespace pfda
