#include "mammoseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "mammoseg/dataset.hpp"
#include "mammoseg/pgm.hpp"

namespace mammoseg {
namespace {

constexpr double kPi = 3.14159265358979323846;

struct Pt {
  double x, y;
};

// Even-odd rule over the polygon edges.
bool point_in_polygon(const std::vector<Pt>& poly, double px, double py) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Pt& a = poly[j];
    const Pt& b = poly[i];
    if ((b.y > py) != (a.y > py)) {
      const double xint = b.x + (py - b.y) * (a.x - b.x) / (a.y - b.y);
      if (px < xint) inside = !inside;
    }
  }
  return inside;
}

struct Ellipse {
  double cx, cy, a, b, theta;

  bool contains(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = dx * c + dy * s;
    const double v = -dx * s + dy * c;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

void rasterize_ellipses(BinaryMask& m, const std::vector<Ellipse>& shapes) {
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      for (const Ellipse& e : shapes)
        if (e.contains(px, py)) {
          m.at(x, y) = 1;
          break;
        }
    }
}

}  // namespace

void PhantomSpec::validate() const {
  if (image_size < 64) throw ConfigError("phantom image_size must be >= 64");
  if (!(contrast > 0.0 && contrast <= 1.0)) throw ConfigError("phantom contrast must be in (0,1]");
  if (noise_sigma < 0.0) throw ConfigError("phantom noise_sigma must be >= 0");
  if (!(contrast > noise_sigma))
    throw ConfigError("phantom contrast must exceed the noise level for learnable classes");
  for (int c : class_counts)
    if (c < 0) throw ConfigError("phantom class counts must be >= 0");
}

BinaryMask sample_shape_mask(int label, int size, Rng& rng) {
  if (size < 64) throw ContractError("shape masks need size >= 64");
  if (label < 0 || label > 3) throw ContractError("shape label must be in [0, 3]");
  BinaryMask m(size, size);
  const double s = double(size);
  const double cx = s * rng.uniform(1.0 / 3.0, 2.0 / 3.0);
  const double cy = s * rng.uniform(1.0 / 3.0, 2.0 / 3.0);

  switch (label) {
    case 3: {  // round: a disk
      const double r = s * rng.uniform(0.15, 0.3);
      rasterize_ellipses(m, {Ellipse{cx, cy, r, r, 0.0}});
      break;
    }
    case 2: {  // oval: one elongated ellipse
      const double a = s * rng.uniform(0.18, 0.32);
      const double ratio = rng.uniform(1.6, 3.0);
      const double theta = rng.uniform(0.0, kPi);
      rasterize_ellipses(m, {Ellipse{cx, cy, a, a / ratio, theta}});
      break;
    }
    case 1: {  // lobular: overlapping ellipses around a common center
      const int lobes = 3 + int(rng.below(4));
      std::vector<Ellipse> shapes;
      for (int i = 0; i < lobes; ++i) {
        const double dist = s * rng.uniform(0.0, 0.08);
        const double ang = rng.uniform(0.0, 2.0 * kPi);
        const double a = s * rng.uniform(0.10, 0.18);
        const double ratio = rng.uniform(1.2, 2.0);
        const double theta = rng.uniform(0.0, kPi);
        shapes.push_back(
            Ellipse{cx + dist * std::cos(ang), cy + dist * std::sin(ang), a, a / ratio, theta});
      }
      rasterize_ellipses(m, shapes);
      break;
    }
    case 0: {  // irregular: jittered star polygon
      const int vertices = 12 + int(rng.below(9));
      const double r0 = s * rng.uniform(0.15, 0.28);
      std::vector<Pt> poly;
      for (int i = 0; i < vertices; ++i) {
        const double ang = 2.0 * kPi * double(i) / double(vertices);
        const double r = r0 * (1.0 + rng.uniform(-0.45, 0.45));
        poly.push_back(Pt{cx + r * std::cos(ang), cy + r * std::sin(ang)});
      }
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          if (point_in_polygon(poly, x + 0.5, y + 0.5)) m.at(x, y) = 1;
      break;
    }
  }
  return m;
}

GrayImage render_phantom_roi(const BinaryMask& mask, const PhantomSpec& spec, Rng& rng) {
  spec.validate();
  const int size = mask.width;
  if (mask.height != size) throw ContractError("phantom masks are square");

  // coarse grid blown up bilinearly gives the low-frequency background field
  const int grid = 8;
  GrayImage coarse(grid, grid);
  for (double& v : coarse.values) v = rng.uniform(0.3, 0.6);
  GrayImage bg = resize_bilinear(coarse, size, size);

  GrayImage soft(size, size);
  for (std::size_t i = 0; i < mask.values.size(); ++i) soft.values[i] = mask.values[i];
  soft = gaussian_smooth(soft, 2.0);

  GrayImage roi(size, size);
  for (std::size_t i = 0; i < roi.values.size(); ++i) {
    double v = bg.values[i] + spec.contrast * soft.values[i];
    if (spec.noise_sigma > 0) v += rng.normal(0.0, spec.noise_sigma);
    roi.values[i] = std::clamp(v, 0.0, 1.0);
  }
  return roi;
}

PhantomSample make_phantom_sample(const PhantomSpec& spec, int label, std::uint64_t index) {
  Rng rng(Rng::hash(spec.seed, index));
  PhantomSample sample;
  sample.label = label;
  sample.mask = sample_shape_mask(label, spec.image_size, rng);
  sample.roi = render_phantom_roi(sample.mask, spec, rng);
  return sample;
}

void generate_phantom_dataset(const PhantomSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "masks", ec);
  if (ec) throw IoError(out_dir, "cannot create dataset directories: " + ec.message());

  std::ofstream labels(fs::path(out_dir) / "labels.csv");
  if (!labels) throw IoError(out_dir + "/labels.csv", "cannot open for writing");
  labels << "filename,shape_label\n";

  std::uint64_t index = 0;
  for (int label = 0; label < 4; ++label) {
    for (int i = 0; i < spec.class_counts[std::size_t(label)]; ++i, ++index) {
      PhantomSample sample = make_phantom_sample(spec, label, index);
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%03d.pgm", shape_label_name(label), i);
      write_pgm(sample.roi, (fs::path(out_dir) / "images" / name).string());
      write_pgm_mask(sample.mask, (fs::path(out_dir) / "masks" / name).string());
      labels << name << "," << shape_label_name(label) << "\n";
    }
  }
  labels.close();
  if (!labels) throw IoError(out_dir + "/labels.csv", "short write");

  nlohmann::json manifest;
  manifest["image_size"] = spec.image_size;
  manifest["contrast"] = spec.contrast;
  manifest["noise_sigma"] = spec.noise_sigma;
  manifest["class_counts"] = spec.class_counts;
  manifest["seed"] = spec.seed;
  manifest["classes"] = {"irregular", "lobular", "oval", "round"};
  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  if (!mf) throw IoError(out_dir + "/manifest.json", "cannot open for writing");
  mf << manifest.dump(2) << "\n";
}

double mask_area(const BinaryMask& mask) {
  double a = 0;
  for (std::uint8_t v : mask.values) a += v ? 1.0 : 0.0;
  return a;
}

double mask_perimeter(const BinaryMask& mask) {
  // Marching squares over 2x2 pixel cells; segment lengths per case. Corners
  // are cut at 45 degrees, which keeps digital disks within a few percent of
  // the true circumference.
  const double kDiag = std::sqrt(2.0) / 2.0;
  double length = 0.0;
  auto at = [&](int x, int y) -> int {
    if (x < 0 || y < 0 || x >= mask.width || y >= mask.height) return 0;
    return mask.at(x, y) ? 1 : 0;
  };
  for (int y = -1; y < mask.height; ++y)
    for (int x = -1; x < mask.width; ++x) {
      const int code =
          at(x, y) | (at(x + 1, y) << 1) | (at(x, y + 1) << 2) | (at(x + 1, y + 1) << 3);
      switch (code) {
        case 0:
        case 15:
          break;
        case 1:
        case 2:
        case 4:
        case 8:
        case 7:
        case 11:
        case 13:
        case 14:
          length += kDiag;
          break;
        case 3:
        case 5:
        case 10:
        case 12:
          length += 1.0;
          break;
        case 6:
        case 9:
          length += 2.0 * kDiag;
          break;
      }
    }
  return length;
}

double circularity(const BinaryMask& mask) {
  const double a = mask_area(mask);
  const double p = mask_perimeter(mask);
  if (p <= 0.0) return 0.0;
  return 4.0 * kPi * a / (p * p);
}

}  // namespace mammoseg
