#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "kneealign/alignment.hpp"
#include "kneealign/synth.hpp"

using namespace ka;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("ka_synth_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST(Synth, ClosureAcrossAngles) {
  for (double a : {-20.0, -13.2, -5.0, 0.0, 0.25, 7.0, 19.99, 20.0}) {
    for (Side side : {Side::Left, Side::Right}) {
      PhantomParams p;
      p.true_atfa = a;
      p.side = side;
      p.leg_rotation = 6.0;
      const Phantom ph = generate_phantom(p);
      EXPECT_NEAR(atfa_fts(ph.landmarks), a, 1e-9);
      EXPECT_NEAR(atfa_fnts(ph.landmarks), a, 1e-9);
      EXPECT_EQ(ph.landmarks.side, side);
    }
  }
}

TEST(Synth, ClosureOverRandomParameters) {
  PhantomRanges r;
  r.post_op_fraction = 0.5;
  for (auto s : phantom_seeds(40, 99)) {
    const auto p = random_phantom_params(r, s);
    const auto ph = generate_phantom(p);
    EXPECT_NEAR(atfa_fts(ph.landmarks), p.true_atfa, 1e-9);
    EXPECT_NEAR(atfa_fnts(ph.landmarks), p.true_atfa, 1e-9);
  }
}

TEST(Synth, Deterministic) {
  PhantomRanges r;
  const auto a = generate_phantoms(3, r, 5), b = generate_phantoms(3, r, 5);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].landmarks.points, b[i].landmarks.points);
  }
  const auto c = generate_phantoms(3, r, 6);
  EXPECT_NE(a[0].image, c[0].image);
}

TEST(Synth, LandmarksInsideImageAndIntensityRange) {
  PhantomRanges r;
  r.post_op_fraction = 0.5;
  for (const auto& ph : generate_phantoms(20, r, 7)) {
    for (const auto& q : ph.landmarks.points) {
      EXPECT_GE(q.x, 8.0);
      EXPECT_GE(q.y, 8.0);
      EXPECT_LE(q.x, ph.image.width - 9.0);
      EXPECT_LE(q.y, ph.image.height - 9.0);
    }
    for (float v : ph.image.pixels) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 255.0f);
      EXPECT_EQ(v, std::round(v));
    }
  }
}

TEST(Synth, ReferenceLengthIsPlateauWidth) {
  PhantomParams p;
  p.plateau_width = 43.0;
  p.leg_rotation = -8.0;
  const auto ph = generate_phantom(p);
  const auto [a, b] = ph.landmarks.pair(ph.landmarks.roles.tibial_plateau);
  EXPECT_NEAR(distance(a, b), 43.0, 1e-9);
}

TEST(Synth, ContoursRunImageLeftToRight) {
  PhantomParams p;
  p.true_atfa = 9.0;
  const auto ph = generate_phantom(p);
  const auto schema = make_knee_schema(p.landmarks);
  for (const auto& c : schema.contours) {
    EXPECT_LT(ph.landmarks.at(c.indices.front()).x, ph.landmarks.at(c.indices.back()).x);
  }
  for (auto pair : ph.landmarks.roles.all()) EXPECT_LT(ph.landmarks.at(pair.first).x, ph.landmarks.at(pair.second).x);
}

TEST(Synth, RightPhantomIsMirroredLeft) {
  PhantomParams p;
  p.true_atfa = 11.0;
  const auto left = generate_phantom(p);
  p.side = Side::Right;
  const auto right = generate_phantom(p);
  EXPECT_EQ(flip_horizontal(right.image), left.image);
  const auto schema = make_knee_schema(p.landmarks);
  const auto back = mirror_landmarks(right.landmarks, schema, p.image_width);
  EXPECT_EQ(back.points, left.landmarks.points);
  EXPECT_EQ(back.side, Side::Left);
}

TEST(Synth, MirrorIsAnInvolution) {
  PhantomRanges r;
  const auto schema = make_knee_schema(40);
  for (const auto& ph : generate_phantoms(5, r, 12)) {
    const auto twice = mirror_landmarks(mirror_landmarks(ph.landmarks, schema, 160), schema, 160);
    EXPECT_EQ(twice.points, ph.landmarks.points);
    EXPECT_EQ(twice.side, ph.landmarks.side);
  }
}

TEST(Synth, RejectsInvalidParameters) {
  PhantomParams p;
  p.true_atfa = 25.0;
  EXPECT_THROW(generate_phantom(p), Error);
  p = {};
  p.landmarks = 11;
  EXPECT_THROW(generate_phantom(p), Error);
  p = {};
  p.plateau_width = 90.0;  // leg no longer fits
  try {
    generate_phantom(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::GeometryOverflow);
  }
}

TEST(Synth, PostOpAddsImplantIntensity) {
  PhantomParams p;
  p.noise_sd = 0.0;
  const auto pre = generate_phantom(p);
  p.post_op = true;
  const auto post = generate_phantom(p);
  double pre_sum = 0.0, post_sum = 0.0;
  for (std::size_t i = 0; i < pre.image.pixels.size(); ++i) {
    pre_sum += pre.image.pixels[i];
    post_sum += post.image.pixels[i];
  }
  EXPECT_GT(post_sum, pre_sum + 1000.0);
  EXPECT_EQ(pre.landmarks.points, post.landmarks.points);
}

TEST(Synth, NoiseHasTheRequestedSpread) {
  PhantomParams p;
  p.noise_sd = 0.0;
  const auto clean = generate_phantom(p);
  p.noise_sd = 3.0;
  const auto noisy = generate_phantom(p);
  double s = 0.0, s2 = 0.0;
  const double n = static_cast<double>(clean.image.pixels.size());
  for (std::size_t i = 0; i < clean.image.pixels.size(); ++i) {
    const double d = noisy.image.pixels[i] - clean.image.pixels[i];
    s += d;
    s2 += d * d;
  }
  EXPECT_NEAR(s / n, 0.0, 0.1);
  // Two roundings add about 1/6 to the variance.
  EXPECT_NEAR(s2 / n, 9.0 + 1.0 / 6.0, 0.5);
}

TEST(Synth, AnglesUniformChiSquare) {
  PhantomRanges r;
  constexpr int kBins = 10, kN = 1000;
  std::vector<int> counts(kBins, 0);
  int right = 0;
  for (auto s : phantom_seeds(kN, 2024)) {
    const auto p = random_phantom_params(r, s);
    const int bin = std::min(kBins - 1, static_cast<int>((p.true_atfa + 20.0) / 40.0 * kBins));
    ++counts[static_cast<std::size_t>(bin)];
    right += p.side == Side::Right;
  }
  double chi2 = 0.0;
  const double expected = static_cast<double>(kN) / kBins;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 27.88);  // df 9, p = 0.001
  EXPECT_NEAR(right / static_cast<double>(kN), 0.5, 0.06);
}

TEST(Synth, MakeDatasetWritesFilesAndManifest) {
  const auto dir = temp_dir("one");
  PhantomRanges r;
  const auto rows = make_dataset(dir, 1, r, 3);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].id, "ph00000");
  EXPECT_TRUE(std::filesystem::exists(dir / "ph00000.pgm"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ph00000.pts"));
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "schema.txt"));
  const auto back = read_manifest(dir / "manifest.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].seed, rows[0].seed);
  EXPECT_EQ(back[0].true_atfa, rows[0].true_atfa);
  const auto ph = generate_phantom(random_phantom_params(r, rows[0].seed));
  EXPECT_EQ(read_pgm(dir / "ph00000.pgm"), ph.image);
  EXPECT_EQ(read_pts(dir / "ph00000.pts"), ph.landmarks.points);
  EXPECT_THROW(make_dataset(dir, 0, r, 3), Error);
  std::filesystem::remove_all(dir);
}
