#pragma once

// Landmark sets, the knee landmark schema (semantic roles, mirror table,
// contour connectivity) and the .pts / schema text formats.
//
// Contours are traced from image-left to image-right, so a horizontal flip
// reverses each contour; the mirror table records that reversal.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kneealign/config.hpp"
#include "kneealign/geometry.hpp"

namespace ka {

enum class Side { Left, Right };

inline std::string to_string(Side s) { return s == Side::Left ? "left" : "right"; }
inline Side side_from_string(const std::string& s) {
  if (s == "left" || s == "L") return Side::Left;
  if (s == "right" || s == "R") return Side::Right;
  throw Error(Errc::ParseError, "unknown side '" + s + "'");
}

struct IndexPair {
  int first = -1;
  int second = -1;
  friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

/// Indices of the point pairs the measurements use. Within each pair `first`
/// is the image-left point.
///   femoral_shaft_a  distal femoral shaft pair ("red")
///   femoral_shaft_b  proximal femoral shaft pair ("yellow")
///   tibial_shaft_a   proximal tibial shaft pair ("black")
///   tibial_shaft_b   distal tibial shaft pair ("blue")
///   femoral_notch    intercondylar notch pair ("purple")
///   tibial_plateau   plateau corners; also the reference-length pair
struct RoleMap {
  IndexPair femoral_shaft_a;
  IndexPair femoral_shaft_b;
  IndexPair tibial_shaft_a;
  IndexPair tibial_shaft_b;
  IndexPair femoral_notch;
  IndexPair tibial_plateau;

  std::vector<IndexPair> all() const {
    return {femoral_shaft_a, femoral_shaft_b, tibial_shaft_a, tibial_shaft_b, femoral_notch, tibial_plateau};
  }

  /// All role indices distinct and inside [0, count).
  bool valid_for(int count) const {
    std::vector<int> idx;
    for (auto p : all()) {
      idx.push_back(p.first);
      idx.push_back(p.second);
    }
    for (int i : idx) {
      if (i < 0 || i >= count) return false;
    }
    std::sort(idx.begin(), idx.end());
    return std::adjacent_find(idx.begin(), idx.end()) == idx.end();
  }

  friend bool operator==(const RoleMap&, const RoleMap&) = default;
};

struct LandmarkSet {
  std::vector<Point2> points;
  RoleMap roles;
  Side side = Side::Left;

  std::size_t size() const { return points.size(); }
  Point2 operator[](std::size_t i) const { return points[i]; }
  Point2 at(int i) const { return points.at(static_cast<std::size_t>(i)); }
  std::pair<Point2, Point2> pair(IndexPair p) const { return {at(p.first), at(p.second)}; }
};

struct Contour {
  std::string name;
  std::vector<int> indices;
};

struct LandmarkSchema {
  int count = 0;
  bool post_op = false;
  RoleMap roles;
  std::vector<int> mirror;  // flipped[k] takes its position from original[mirror[k]]
  std::vector<Contour> contours;

  bool has_mirror() const { return !mirror.empty(); }

  /// Contour index holding each landmark (-1 if none).
  std::vector<int> contour_of() const {
    std::vector<int> out(static_cast<std::size_t>(count), -1);
    for (std::size_t c = 0; c < contours.size(); ++c) {
      for (int i : contours[c].indices) out.at(static_cast<std::size_t>(i)) = static_cast<int>(c);
    }
    return out;
  }

  void validate() const {
    if (count < 1) throw Error(Errc::SchemaMismatch, "schema has no landmarks");
    if (!roles.valid_for(count)) throw Error(Errc::SchemaMismatch, "role indices out of range or repeated");
    if (has_mirror()) {
      if (mirror.size() != static_cast<std::size_t>(count)) throw Error(Errc::SchemaMismatch, "mirror table size");
      for (int k = 0; k < count; ++k) {
        const int m = mirror[static_cast<std::size_t>(k)];
        if (m < 0 || m >= count || mirror[static_cast<std::size_t>(m)] != k) {
          throw Error(Errc::SchemaMismatch, "mirror table is not an involution");
        }
      }
    }
    std::vector<int> seen(static_cast<std::size_t>(count), 0);
    for (const auto& c : contours) {
      if (c.indices.size() < 2) throw Error(Errc::SchemaMismatch, "contour '" + c.name + "' has < 2 points");
      for (int i : c.indices) {
        if (i < 0 || i >= count || seen[static_cast<std::size_t>(i)]++) {
          throw Error(Errc::SchemaMismatch, "contour '" + c.name + "' index invalid or shared");
        }
      }
    }
  }

  LandmarkSet make_set(std::vector<Point2> points, Side side = Side::Left) const {
    if (points.size() != static_cast<std::size_t>(count)) {
      throw Error(Errc::SchemaMismatch, "expected " + std::to_string(count) + " points, got " +
                                            std::to_string(points.size()));
    }
    return LandmarkSet{std::move(points), roles, side};
  }
};

/// Free (non-role) points per gap between consecutive role points along a
/// contour, for the femur and tibia of the default knee schema.
struct ContourLayout {
  std::vector<int> femur_gaps;  // yellowL|redL|notchL|notchR|redR|yellowR
  std::vector<int> tibia_gaps;  // blueL|blackL|plateauL|plateauR|blackR|blueR
};

inline constexpr int kRolePoints = 12;
inline constexpr int kMaxLandmarks = 181;

/// Distributes count - 12 free points over the ten gaps with fixed weights,
/// symmetric under left/right mirroring; leftovers go to the plateau.
inline ContourLayout knee_contour_layout(int count) {
  if (count < kRolePoints || count > kMaxLandmarks) {
    throw Error(Errc::SchemaMismatch, "landmark count must be in [12, 181]");
  }
  const int free_points = count - kRolePoints;
  constexpr int kTotalWeight = 28;
  auto share = [&](int w) { return free_points * w / kTotalWeight; };
  const int f_outer = share(1), f_inner = share(7);
  const int t_outer = share(1), t_inner = share(2);
  const int plateau = free_points - 2 * (f_outer + f_inner + t_outer + t_inner);
  return ContourLayout{{f_outer, f_inner, 0, f_inner, f_outer}, {t_outer, t_inner, plateau, t_inner, t_outer}};
}

/// The knee schema: femur contour (indices 0..nf-1) then tibia contour.
inline LandmarkSchema make_knee_schema(int count, bool post_op = false) {
  const ContourLayout layout = knee_contour_layout(count);
  LandmarkSchema s;
  s.count = count;
  s.post_op = post_op;

  auto build = [](const std::vector<int>& gaps, int start, std::vector<int>& role_positions) {
    std::vector<int> indices;
    int next = start;
    for (std::size_t r = 0; r < 6; ++r) {
      role_positions.push_back(next);
      indices.push_back(next++);
      if (r < gaps.size()) {
        for (int i = 0; i < gaps[r]; ++i) indices.push_back(next++);
      }
    }
    return indices;
  };
  std::vector<int> fr, tr;
  std::vector<int> femur = build(layout.femur_gaps, 0, fr);
  std::vector<int> tibia = build(layout.tibia_gaps, static_cast<int>(femur.size()), tr);
  // fr: yellowL redL notchL notchR redR yellowR; tr: blueL blackL plateauL plateauR blackR blueR.
  s.roles.femoral_shaft_b = {fr[0], fr[5]};
  s.roles.femoral_shaft_a = {fr[1], fr[4]};
  s.roles.femoral_notch = {fr[2], fr[3]};
  s.roles.tibial_shaft_b = {tr[0], tr[5]};
  s.roles.tibial_shaft_a = {tr[1], tr[4]};
  s.roles.tibial_plateau = {tr[2], tr[3]};

  s.mirror.assign(static_cast<std::size_t>(count), -1);
  for (const auto* contour : {&femur, &tibia}) {
    const std::size_t n = contour->size();
    for (std::size_t i = 0; i < n; ++i) s.mirror[static_cast<std::size_t>((*contour)[i])] = (*contour)[n - 1 - i];
  }
  s.contours = {{"femur", femur}, {"tibia", tibia}};
  s.validate();
  return s;
}

/// Horizontal mirror of a landmark set inside an image of width `image_width`:
/// x -> (W-1) - x, indices remapped through the mirror table, side toggled.
/// Applying it twice is exact for coordinates on a dyadic grid (as the
/// generator emits); arbitrary doubles may come back one ulp off.
inline LandmarkSet mirror_landmarks(const LandmarkSet& in, const LandmarkSchema& schema, int image_width) {
  if (!schema.has_mirror()) throw Error(Errc::MissingMirrorTable, "schema has no mirror table");
  if (in.size() != static_cast<std::size_t>(schema.count)) throw Error(Errc::SchemaMismatch, "landmark count");
  LandmarkSet out = in;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const Point2 p = in.points[static_cast<std::size_t>(schema.mirror[k])];
    out.points[k] = {static_cast<double>(image_width - 1) - p.x, p.y};
  }
  out.side = in.side == Side::Left ? Side::Right : Side::Left;
  return out;
}

// ---- .pts files -------------------------------------------------------------

inline std::string format_pts(const std::vector<Point2>& points) {
  std::string out = "version: 1\nn_points: " + std::to_string(points.size()) + "\n{\n";
  for (const auto& p : points) out += format_double(p.x) + " " + format_double(p.y) + "\n";
  out += "}\n";
  return out;
}

inline std::vector<Point2> parse_pts(const std::string& text, const std::string& origin = "<pts>") {
  std::istringstream in(text);
  std::string line;
  auto fail = [&](const std::string& msg) { throw Error(Errc::ParseError, origin + ": " + msg); };
  auto next_line = [&]() {
    while (std::getline(in, line)) {
      line = trim(line);
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next_line() || line.rfind("version:", 0) != 0) fail("expected 'version: 1'");
  if (trim(line.substr(8)) != "1") fail("unsupported version");
  if (!next_line() || line.rfind("n_points:", 0) != 0) fail("expected 'n_points: K'");
  int n = 0;
  {
    const std::string num = trim(line.substr(9));
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), n);
    if (ec != std::errc() || ptr != num.data() + num.size() || n < 0) fail("bad n_points");
  }
  if (!next_line() || line != "{") fail("expected '{'");
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (!next_line()) fail("missing point " + std::to_string(i));
    std::istringstream ls(line);
    std::string xs, ys, extra;
    if (!(ls >> xs >> ys) || (ls >> extra)) fail("malformed point line '" + line + "'");
    Point2 p;
    auto parse = [&](const std::string& s, double& v) {
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size()) fail("bad coordinate '" + s + "'");
    };
    parse(xs, p.x);
    parse(ys, p.y);
    pts.push_back(p);
  }
  if (!next_line() || line != "}") fail("expected '}'");
  return pts;
}

inline void write_pts(const std::filesystem::path& path, const std::vector<Point2>& points) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << format_pts(points);
}

inline std::vector<Point2> read_pts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pts(ss.str(), path.string());
}

// ---- schema files -------------------------------------------------------------

inline std::string format_schema(const LandmarkSchema& s) {
  auto list = [](const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + std::to_string(v[i]);
    return out;
  };
  auto pair = [](IndexPair p) { return std::to_string(p.first) + " " + std::to_string(p.second); };
  std::string out =
      "# knee landmark schema\n"
      "# role pairs list the image-left index first; contours run image-left to image-right\n";
  out += "version = 1\n";
  out += "n_points = " + std::to_string(s.count) + "\n";
  out += "post_op = " + std::string(s.post_op ? "1" : "0") + "\n";
  out += "femoral_shaft_a = " + pair(s.roles.femoral_shaft_a) + "\n";
  out += "femoral_shaft_b = " + pair(s.roles.femoral_shaft_b) + "\n";
  out += "tibial_shaft_a = " + pair(s.roles.tibial_shaft_a) + "\n";
  out += "tibial_shaft_b = " + pair(s.roles.tibial_shaft_b) + "\n";
  out += "femoral_notch = " + pair(s.roles.femoral_notch) + "\n";
  out += "tibial_plateau = " + pair(s.roles.tibial_plateau) + "\n";
  if (s.has_mirror()) out += "mirror = " + list(s.mirror) + "\n";
  std::string names;
  for (const auto& c : s.contours) names += (names.empty() ? "" : " ") + c.name;
  out += "contours = " + names + "\n";
  for (const auto& c : s.contours) out += "contour." + c.name + " = " + list(c.indices) + "\n";
  return out;
}

inline LandmarkSchema parse_schema(const std::string& text, const std::string& origin = "<schema>") {
  const KeyValueConfig kv = KeyValueConfig::parse(text, origin);
  LandmarkSchema s;
  if (kv.get_int("version", 1) != 1) throw Error(Errc::ParseError, origin + ": unsupported schema version");
  s.count = static_cast<int>(kv.get_int("n_points", 0));
  s.post_op = kv.get_bool("post_op", false);
  auto pair = [&](const std::string& key) {
    const auto v = kv.get_int_list(key);
    if (v.size() != 2) throw Error(Errc::ParseError, origin + ": '" + key + "' needs two indices");
    return IndexPair{v[0], v[1]};
  };
  s.roles.femoral_shaft_a = pair("femoral_shaft_a");
  s.roles.femoral_shaft_b = pair("femoral_shaft_b");
  s.roles.tibial_shaft_a = pair("tibial_shaft_a");
  s.roles.tibial_shaft_b = pair("tibial_shaft_b");
  s.roles.femoral_notch = pair("femoral_notch");
  s.roles.tibial_plateau = pair("tibial_plateau");
  if (kv.contains("mirror")) s.mirror = kv.get_int_list("mirror");
  std::istringstream names(kv.get_string("contours", ""));
  std::string name;
  std::set<std::string> allowed{"version", "n_points", "post_op", "femoral_shaft_a", "femoral_shaft_b",
                                "tibial_shaft_a", "tibial_shaft_b", "femoral_notch", "tibial_plateau",
                                "mirror", "contours"};
  while (names >> name) {
    s.contours.push_back({name, kv.get_int_list("contour." + name)});
    allowed.insert("contour." + name);
  }
  kv.reject_unknown(allowed);
  s.validate();
  return s;
}

inline void write_schema(const std::filesystem::path& path, const LandmarkSchema& s) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << format_schema(s);
}

inline LandmarkSchema read_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_schema(ss.str(), path.string());
}

}  // namespace ka
