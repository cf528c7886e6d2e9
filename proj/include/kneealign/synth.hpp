#pragma once

// Procedural AP knee phantoms with exact landmarks and a known aTFA.
//
// Shapes are built in bone-local coordinates measured in units of the
// plateau width L (u lateral for a left knee, v along the bone towards the
// ankle), then placed with the leg rotation and scaled to pixels. The tibia
// sets the reference direction; the femur is rotated by +true_atfa about the
// joint centre, which moves the tibia's ankle end to +x relative to the femur
// (valgus for a left knee). Right knees are mirrored left knees.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kneealign/alignment.hpp"
#include "kneealign/config.hpp"
#include "kneealign/error.hpp"
#include "kneealign/geometry.hpp"
#include "kneealign/image.hpp"
#include "kneealign/landmarks.hpp"

namespace ka {

struct PhantomParams {
  double true_atfa = 0.0;         // degrees, valgus positive
  Side side = Side::Left;
  int landmarks = 40;
  bool post_op = false;
  int image_width = 160;
  int image_height = 160;
  double plateau_width = 40.0;    // px; the reference length
  double leg_rotation = 0.0;      // degrees
  Point2 joint_offset{0.0, 0.0};  // px from the image centre
  // Shape ratios relative to the plateau width.
  double femoral_shaft_half = 0.27;
  double tibial_shaft_half = 0.25;
  double condyle_half = 0.47;
  double notch_depth = 0.20;      // notch roof above the condyle bottoms
  double joint_gap = 0.12;
  double femoral_b_height = 1.05;  // proximal femoral pair above the condyle bottoms
  double femoral_a_height = 0.55;  // distal femoral pair
  double tibial_a_depth = 0.55;    // proximal tibial pair below the plateau
  double tibial_b_depth = 1.05;    // distal tibial pair
  double spine_height = 0.06;
  double noise_sd = 3.0;
  double blur_sigma = 0.7;
  std::uint64_t seed = 1;

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(Errc::ConfigError, "phantom: " + m); };
    if (!(std::abs(true_atfa) <= 20.0)) bad("true_atfa outside [-20, 20]");
    if (landmarks < kRolePoints || landmarks > kMaxLandmarks) bad("landmark count outside [12, 181]");
    if (image_width < 32 || image_height < 32) bad("image too small");
    if (!(plateau_width * std::min(femoral_shaft_half, tibial_shaft_half) * 2.0 > 4.0)) bad("shaft widths must exceed 4 px");
    if (!(condyle_half > femoral_shaft_half && condyle_half - 0.12 > 0.14)) bad("condyles too narrow");
    if (!(0.5 > tibial_shaft_half)) bad("tibial shaft wider than the plateau");
    if (!(femoral_b_height > femoral_a_height && femoral_a_height > 0.5)) bad("femoral pair heights");
    if (!(tibial_b_depth > tibial_a_depth && tibial_a_depth > 0.45)) bad("tibial pair depths");
    if (!(notch_depth > 0.05 && notch_depth < 0.3)) bad("notch depth");
    if (!(noise_sd >= 0.0 && blur_sigma >= 0.0)) bad("noise and blur must be non-negative");
  }
};

struct Phantom {
  Image image;
  LandmarkSet landmarks;
  double true_atfa = 0.0;
};

namespace detail {

struct BoneOutline {
  std::vector<Point2> left;  // left half, top of the contour first (bone-local coords)
  std::vector<std::size_t> roles;  // indices into `left` of the three role vertices, contour order
};

inline void push_smoothstep(std::vector<Point2>& out, Point2 a, Point2 b, int steps) {
  for (int i = 1; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const double s = t * t * (3.0 - 2.0 * t);
    out.push_back({a.x + (b.x - a.x) * s, a.y + (b.y - a.y) * t});
  }
}

// Femur left half from the proximal cut down to the notch roof centre.
// Roles: yellowL, redL, notchL.
inline BoneOutline femur_left_half(const PhantomParams& p) {
  const double hf = p.femoral_shaft_half, hc = p.condyle_half, r = 0.12;
  const double notch_bottom = 0.13, notch_top = 0.07;
  BoneOutline o;
  o.left.push_back({-hf, -3.0});
  o.roles.push_back(o.left.size());
  o.left.push_back({-hf, -p.femoral_b_height});
  o.roles.push_back(o.left.size());
  o.left.push_back({-hf, -p.femoral_a_height});
  o.left.push_back({-hf, -0.45});
  push_smoothstep(o.left, {-hf, -0.45}, {-hc, -0.22}, 12);
  o.left.push_back({-hc, -r});
  for (int i = 1; i <= 12; ++i) {
    const double phi = std::numbers::pi - 0.5 * std::numbers::pi * i / 12.0;
    o.left.push_back({-hc + r + r * std::cos(phi), -r + r * std::sin(phi)});
  }
  o.left.push_back({-notch_bottom, 0.0});
  o.roles.push_back(o.left.size());
  o.left.push_back({-notch_top, -p.notch_depth});
  o.left.push_back({0.0, -p.notch_depth});
  return o;
}

// Tibia left half from the distal cut up to the plateau centre.
// Roles: blueL, blackL, plateauL.
inline BoneOutline tibia_left_half(const PhantomParams& p) {
  const double ht = p.tibial_shaft_half;
  BoneOutline o;
  o.left.push_back({-ht, 3.0});
  o.roles.push_back(o.left.size());
  o.left.push_back({-ht, p.tibial_b_depth});
  o.roles.push_back(o.left.size());
  o.left.push_back({-ht, p.tibial_a_depth});
  o.left.push_back({-ht, 0.45});
  push_smoothstep(o.left, {-ht, 0.45}, {-0.5, 0.12}, 12);
  o.roles.push_back(o.left.size());
  o.left.push_back({-0.5, 0.0});
  o.left.push_back({-0.12, 0.0});
  o.left.push_back({-0.05, -p.spine_height});
  o.left.push_back({0.0, -0.8 * p.spine_height});
  return o;
}

// Full symmetric outline: left half then mirrored right half (without
// duplicating the centre vertex).
inline std::vector<Point2> full_outline(const std::vector<Point2>& left) {
  std::vector<Point2> out = left;
  for (std::size_t i = left.size() - 1; i-- > 0;) out.push_back({-left[i].x, left[i].y});
  return out;
}

// Points at `count` equal arc-length fractions strictly between vertices a and b of `path`.
inline void sample_between(const std::vector<Point2>& path, std::size_t a, std::size_t b, int count,
                           std::vector<Point2>& out) {
  if (count <= 0) return;
  std::vector<double> cum{0.0};
  for (std::size_t i = a + 1; i <= b; ++i) cum.push_back(cum.back() + distance(path[i - 1], path[i]));
  const double total = cum.back();
  std::size_t seg = 0;
  for (int j = 1; j <= count; ++j) {
    const double s = total * j / (count + 1);
    while (seg + 1 < cum.size() - 1 && cum[seg + 1] < s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0.0 ? (s - cum[seg]) / len : 0.0;
    const Point2 p0 = path[a + seg], p1 = path[a + seg + 1];
    out.push_back(p0 + t * (p1 - p0));
  }
}

// Contour landmarks of one bone: role vertices plus free points per gap.
// `path` runs image-left to image-right; `role_at` lists the six role vertex indices.
inline std::vector<Point2> contour_landmarks(const std::vector<Point2>& path, const std::vector<std::size_t>& role_at,
                                             const std::vector<int>& gaps) {
  std::vector<Point2> out;
  for (std::size_t r = 0; r < role_at.size(); ++r) {
    out.push_back(path[role_at[r]]);
    if (r + 1 < role_at.size()) sample_between(path, role_at[r], role_at[r + 1], gaps[r], out);
  }
  return out;
}

// Sutherland-Hodgman clip of a polygon to the half-plane y >= y0 (bone-local).
inline std::vector<Point2> clip_below(const std::vector<Point2>& poly, double y0) {
  std::vector<Point2> out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2 a = poly[i], b = poly[(i + 1) % poly.size()];
    const bool ina = a.y >= y0, inb = b.y >= y0;
    if (ina) out.push_back(a);
    if (ina != inb) out.push_back(a + ((y0 - a.y) / (b.y - a.y)) * (b - a));
  }
  return out;
}

// Fractional coverage of each pixel by an even-odd polygon, 4x4 supersampled.
inline void accumulate_coverage(std::vector<float>& acc, int width, int height, const std::vector<Point2>& poly,
                                float amount) {
  constexpr int kSub = 4;
  const float w = amount / (kSub * kSub);
  std::vector<double> xs;
  for (int sy = 0; sy < height * kSub; ++sy) {
    const double y = (sy + 0.5) / kSub - 0.5;
    xs.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point2 a = poly[i], b = poly[(i + 1) % poly.size()];
      if ((a.y <= y) != (b.y <= y)) xs.push_back(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
    }
    if (xs.empty()) continue;
    std::sort(xs.begin(), xs.end());
    const int row = sy / kSub;
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const int s0 = std::max(0, static_cast<int>(std::ceil((xs[i] + 0.5) * kSub - 0.5)));
      const int s1 = std::min(width * kSub - 1, static_cast<int>(std::floor((xs[i + 1] + 0.5) * kSub - 0.5)));
      for (int sx = s0; sx <= s1; ++sx) acc[static_cast<std::size_t>(row) * width + sx / kSub] += w;
    }
  }
}

}  // namespace detail

/// Renders a phantom. Deterministic in `p` (including p.seed).
inline Phantom generate_phantom(const PhantomParams& p) {
  p.validate();
  const LandmarkSchema schema = make_knee_schema(p.landmarks, p.post_op);
  const ContourLayout layout = knee_contour_layout(p.landmarks);
  const double L = p.plateau_width;
  const double rho = deg_to_rad(p.leg_rotation);
  const double theta = deg_to_rad(p.true_atfa);

  // Joint centre J, on both centre lines; tibial plateau centre sits gap/2 below it.
  const Point2 centre{0.5 * (p.image_width - 1) + p.joint_offset.x, 0.5 * (p.image_height - 1) + p.joint_offset.y};
  const Point2 plateau_centre = centre + rotate({0.0, 0.5 * p.joint_gap * L}, rho);
  auto tibia_to_image = [&](Point2 q) { return plateau_centre + rotate(L * q, rho); };
  auto femur_to_image = [&](Point2 q) {
    return centre + rotate(L * Point2{q.x, q.y - 0.5 * p.joint_gap}, rho + theta);
  };

  const detail::BoneOutline femur = detail::femur_left_half(p);
  const detail::BoneOutline tibia = detail::tibia_left_half(p);
  const std::vector<Point2> femur_full = detail::full_outline(femur.left);
  const std::vector<Point2> tibia_full = detail::full_outline(tibia.left);

  // Contour paths from image-left to image-right, and their role vertices.
  // Both halves start on the image-left side, so the full outline already runs
  // left to right; right-side roles are the mirrored left ones in reverse.
  auto roles_of = [](const detail::BoneOutline& half, std::size_t n) {
    std::vector<std::size_t> roles = half.roles;
    for (std::size_t i = half.roles.size(); i-- > 0;) roles.push_back(n - 1 - half.roles[i]);
    return roles;
  };
  const auto& femur_path = femur_full;
  const auto& tibia_path = tibia_full;
  const auto femur_roles = roles_of(femur, femur_full.size());
  const auto tibia_roles = roles_of(tibia, tibia_full.size());

  std::vector<Point2> local_f = detail::contour_landmarks(femur_path, femur_roles, layout.femur_gaps);
  std::vector<Point2> local_t = detail::contour_landmarks(tibia_path, tibia_roles, layout.tibia_gaps);
  std::vector<Point2> points;
  points.reserve(static_cast<std::size_t>(p.landmarks));
  for (auto q : local_f) points.push_back(femur_to_image(q));
  for (auto q : local_t) points.push_back(tibia_to_image(q));
  // Snap to a 2^-40 px grid: on it (W-1) - x is exact, so mirroring twice
  // reproduces the coordinates bit for bit.
  for (auto& q : points) q = {std::ldexp(std::round(std::ldexp(q.x, 40)), -40), std::ldexp(std::round(std::ldexp(q.y, 40)), -40)};

  constexpr double kMargin = 8.0;
  for (const auto& q : points) {
    if (q.x < kMargin || q.y < kMargin || q.x > p.image_width - 1 - kMargin || q.y > p.image_height - 1 - kMargin) {
      throw Error(Errc::GeometryOverflow, "phantom landmark within 8 px of the image border");
    }
  }

  // Rendering: background ramp + additive bone densities (+ implant bands).
  std::vector<float> density(static_cast<std::size_t>(p.image_width) * p.image_height, 0.0f);
  auto to_image = [](const std::vector<Point2>& poly, auto&& fn) {
    std::vector<Point2> out;
    out.reserve(poly.size());
    for (auto q : poly) out.push_back(fn(q));
    return out;
  };
  detail::accumulate_coverage(density, p.image_width, p.image_height, to_image(femur_full, femur_to_image), 110.0f);
  detail::accumulate_coverage(density, p.image_width, p.image_height, to_image(tibia_full, tibia_to_image), 110.0f);
  if (p.post_op) {
    detail::accumulate_coverage(density, p.image_width, p.image_height,
                                to_image(detail::clip_below(femur_full, -0.3), femur_to_image), 70.0f);
    const std::vector<Point2> tray{{-0.5, 0.02}, {0.5, 0.02}, {0.5, 0.1}, {-0.5, 0.1}};
    detail::accumulate_coverage(density, p.image_width, p.image_height, to_image(tray, tibia_to_image), 70.0f);
  }

  Image img(p.image_width, p.image_height);
  for (int y = 0; y < p.image_height; ++y) {
    for (int x = 0; x < p.image_width; ++x) {
      img.at(x, y) = 25.0f + 15.0f * static_cast<float>(y) / p.image_height + density[static_cast<std::size_t>(y) * p.image_width + x];
    }
  }
  img = gaussian_blur(img, p.blur_sigma);
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : img.pixels) {
    const double n = p.noise_sd > 0.0 ? p.noise_sd * noise(rng) : 0.0;
    v = static_cast<float>(std::clamp(std::round(v + n), 0.0, 255.0));
  }

  Phantom out{std::move(img), schema.make_set(std::move(points), Side::Left), p.true_atfa};
  if (p.side == Side::Right) {
    out.landmarks = mirror_landmarks(out.landmarks, schema, p.image_width);
    out.image = flip_horizontal(out.image);
  }
  return out;
}

/// Ranges for randomized phantom parameters.
struct PhantomRanges {
  double atfa_min = -20.0, atfa_max = 20.0;
  double plateau_min = 36.0, plateau_max = 46.0;
  double rotation_max = 10.0;
  double offset_max = 6.0;
  double shape_jitter = 0.08;  // relative jitter of the shape ratios
  double right_fraction = 0.5;
  double post_op_fraction = 0.0;
  int landmarks = 40;
  int image_width = 160, image_height = 160;
};

/// Draws phantom parameters from `r` using a generator seeded with `seed`.
/// The phantom's own noise seed is derived from the same stream.
inline PhantomParams random_phantom_params(const PhantomRanges& r, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto jitter = [&](double v) { return v * (1.0 + uni(-r.shape_jitter, r.shape_jitter)); };
  PhantomParams p;
  p.true_atfa = uni(r.atfa_min, r.atfa_max);
  p.side = uni(0.0, 1.0) < r.right_fraction ? Side::Right : Side::Left;
  p.post_op = uni(0.0, 1.0) < r.post_op_fraction;
  p.landmarks = r.landmarks;
  p.image_width = r.image_width;
  p.image_height = r.image_height;
  p.plateau_width = uni(r.plateau_min, r.plateau_max);
  p.leg_rotation = uni(-r.rotation_max, r.rotation_max);
  p.joint_offset = {uni(-r.offset_max, r.offset_max), uni(-r.offset_max, r.offset_max)};
  p.femoral_shaft_half = jitter(p.femoral_shaft_half);
  p.tibial_shaft_half = jitter(p.tibial_shaft_half);
  p.condyle_half = jitter(p.condyle_half);
  p.notch_depth = jitter(p.notch_depth);
  p.joint_gap = jitter(p.joint_gap);
  p.spine_height = jitter(p.spine_height);
  p.seed = rng();
  return p;
}

struct ManifestRow {
  std::string id;
  double true_atfa = 0.0;
  Side side = Side::Left;
  bool post_op = false;
  std::uint64_t seed = 0;
};

inline std::string manifest_header() { return "id,true_atfa,side,post_op,seed"; }

inline std::string format_manifest(const std::vector<ManifestRow>& rows) {
  std::string out = manifest_header() + "\n";
  for (const auto& r : rows) {
    out += r.id + "," + format_double(r.true_atfa) + "," + to_string(r.side) + "," + (r.post_op ? "1" : "0") + "," +
           std::to_string(r.seed) + "\n";
  }
  return out;
}

inline std::vector<ManifestRow> parse_manifest(const std::string& text, const std::string& origin = "<manifest>") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != manifest_header()) {
    throw Error(Errc::ParseError, origin + ": expected header '" + manifest_header() + "'");
  }
  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw Error(Errc::ParseError, origin + ": malformed row '" + line + "'");
    ManifestRow r;
    r.id = f[0];
    try {
      r.true_atfa = std::stod(f[1]);
      r.seed = std::stoull(f[4]);
    } catch (const std::exception&) {
      throw Error(Errc::ParseError, origin + ": bad number in row '" + line + "'");
    }
    r.side = side_from_string(f[2]);
    r.post_op = f[3] == "1";
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.string());
}

inline std::string phantom_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ph%05zu", i);
  return buf;
}

/// Per-phantom seeds derived from a master seed.
inline std::vector<std::uint64_t> phantom_seeds(std::size_t n, std::uint64_t master_seed) {
  std::mt19937_64 rng(master_seed);
  std::vector<std::uint64_t> seeds(n);
  for (auto& s : seeds) s = rng();
  return seeds;
}

/// In-memory dataset (no files).
inline std::vector<Phantom> generate_phantoms(std::size_t n, const PhantomRanges& r, std::uint64_t master_seed) {
  std::vector<Phantom> out;
  out.reserve(n);
  for (auto s : phantom_seeds(n, master_seed)) out.push_back(generate_phantom(random_phantom_params(r, s)));
  return out;
}

/// Writes <id>.pgm and <id>.pts per phantom plus manifest.csv and schema.txt into `dir`.
inline std::vector<ManifestRow> make_dataset(const std::filesystem::path& dir, std::size_t n, const PhantomRanges& r,
                                             std::uint64_t master_seed) {
  if (n < 1) throw Error(Errc::EmptyDataset, "make_dataset needs n >= 1");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
  const auto seeds = phantom_seeds(n, master_seed);
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const PhantomParams params = random_phantom_params(r, seeds[i]);
    const Phantom ph = generate_phantom(params);
    ManifestRow row{phantom_id(i), ph.true_atfa, params.side, params.post_op, seeds[i]};
    write_pgm(dir / (row.id + ".pgm"), ph.image);
    write_pts(dir / (row.id + ".pts"), ph.landmarks.points);
    rows.push_back(row);
  }
  {
    std::ofstream out(dir / "manifest.csv", std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write manifest in " + dir.string());
    out << format_manifest(rows);
  }
  write_schema(dir / "schema.txt", make_knee_schema(r.landmarks, r.post_op_fraction > 0.0));
  return rows;
}

}  // namespace ka
