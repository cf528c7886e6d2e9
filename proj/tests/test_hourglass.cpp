#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kneealign/hourglass.hpp"
#include "kneealign/metrics.hpp"
#include "kneealign/synth.hpp"
#include "kneealign/train.hpp"

using namespace ka;

namespace {

template <class T>
Tensor<T> random_tensor(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

HourglassConfig small_config(int depth = 2, int width = 4, int k = 3, int size = 16) {
  HourglassConfig c;
  c.depth = depth;
  c.width = width;
  c.landmarks = k;
  c.input_height = size;
  c.input_width = size;
  return c;
}

template <class T>
void randomize_head(const HourglassModel<T>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  auto w = m.head().weight;
  for (auto& v : w.data()) v = static_cast<T>(n(rng));
}

// Straight-line 1x1 conv on one pixel.
double pointwise(const ConvLayer<double>& c, const std::vector<double>& in, int out_channel) {
  const int cin = c.weight.dim(1);
  double acc = c.bias[static_cast<std::size_t>(out_channel)];
  for (int i = 0; i < cin; ++i) acc += c.weight[static_cast<std::size_t>(out_channel * cin + i)] * in[static_cast<std::size_t>(i)];
  return acc;
}

}  // namespace

TEST(AttentionGate, MatchesDirectFormula) {
  HourglassModel<double> m(small_config());
  const auto& gate = m.gates()[0];
  std::mt19937_64 rng(1);
  // Non-trivial psi so alpha varies.
  auto psi_w = gate.psi.weight;
  for (auto& v : psi_w.data()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  auto x = random_tensor<double>(rng, {1, 4, 8, 8});
  auto g = random_tensor<double>(rng, {1, 8, 4, 4});
  const auto y = gate(x, g);
  ASSERT_EQ(y.shape(), x.shape());
  const int cg = gate.skip_proj.weight.dim(0);
  for (int yy = 0; yy < 8; ++yy) {
    for (int xx = 0; xx < 8; ++xx) {
      std::vector<double> xv(4), gv(8);
      for (int c = 0; c < 4; ++c) xv[static_cast<std::size_t>(c)] = x[static_cast<std::size_t>((c * 8 + yy) * 8 + xx)];
      for (int c = 0; c < 8; ++c) gv[static_cast<std::size_t>(c)] = g[static_cast<std::size_t>((c * 4 + yy / 2) * 4 + xx / 2)];
      std::vector<double> hidden(static_cast<std::size_t>(cg));
      for (int c = 0; c < cg; ++c) {
        hidden[static_cast<std::size_t>(c)] = std::max(0.0, pointwise(gate.skip_proj, xv, c) + pointwise(gate.gate_proj, gv, c));
      }
      const double alpha = 1.0 / (1.0 + std::exp(-pointwise(gate.psi, hidden, 0)));
      EXPECT_GT(alpha, 0.0);
      EXPECT_LT(alpha, 1.0);
      for (int c = 0; c < 4; ++c) {
        const auto i = static_cast<std::size_t>((c * 8 + yy) * 8 + xx);
        EXPECT_NEAR(y[i], xv[static_cast<std::size_t>(c)] * alpha, 1e-5);
        EXPECT_LE(std::abs(y[i]), std::abs(x[i]));
      }
    }
  }
}

TEST(AttentionGate, OpenAndClosedLimits) {
  HourglassModel<double> m(small_config());
  std::mt19937_64 rng(2);
  auto x = random_tensor<double>(rng, {1, 4, 8, 8});
  auto g = random_tensor<double>(rng, {1, 8, 4, 4});
  auto gate = m.gates()[0];
  auto psi_w = gate.psi.weight;
  auto psi_b = gate.psi.bias;
  for (auto& v : psi_w.data()) v = 0.0;
  psi_b.data()[0] = 50.0;
  auto open = gate(x, g);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(open[i], x[i], 1e-12);
  psi_b.data()[0] = -50.0;
  auto closed = gate(x, g);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(closed[i], 0.0, 1e-12);
}

TEST(AttentionGate, RejectsIncompatibleGatingSize) {
  HourglassModel<double> m(small_config());
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>(rng, {1, 4, 8, 8});
  auto g = random_tensor<double>(rng, {1, 8, 3, 3});
  try {
    m.gates()[0](x, g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Hourglass, ZeroHeadGivesZeroHeatmaps) {
  HourglassModel<float> m(small_config());
  std::mt19937_64 rng(4);
  const auto y = m.forward(random_tensor<float>(rng, {2, 1, 16, 16}));
  ASSERT_EQ(y.shape(), (Shape{2, 3, 16, 16}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Hourglass, OutputShapeForSeveralConfigs) {
  std::mt19937_64 rng(5);
  for (auto [d, n, k, h, w] : {std::tuple{1, 4, 1, 8, 6}, std::tuple{2, 4, 5, 12, 16}, std::tuple{3, 8, 2, 64, 64},
                              std::tuple{3, 16, 40, 96, 96}}) {
    HourglassConfig c = small_config(d, n, k, h);
    c.input_width = w;
    HourglassModel<float> m(c);
    const auto y = m.forward(random_tensor<float>(rng, {1, 1, h, w}));
    EXPECT_EQ(y.shape(), (Shape{1, k, h, w}));
  }
}

TEST(Hourglass, RejectsWrongInputSize) {
  HourglassModel<float> m(small_config());
  try {
    m.forward(Tensor<float>({1, 1, 16, 8}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Hourglass, ConfigValidation) {
  auto bad = small_config();
  bad.input_height = 18;  // not divisible by 4
  EXPECT_THROW(HourglassModel<float>{bad}, Error);
  bad = small_config();
  bad.width = 2;
  EXPECT_THROW(HourglassModel<float>{bad}, Error);
  bad = small_config();
  bad.depth = 0;
  EXPECT_THROW(HourglassModel<float>{bad}, Error);
}

TEST(Hourglass, ChannelsDoubleUpToFourN) {
  HourglassConfig c = small_config(4, 8);
  EXPECT_EQ(c.channels(0), 8);
  EXPECT_EQ(c.channels(1), 16);
  EXPECT_EQ(c.channels(2), 32);
  EXPECT_EQ(c.channels(3), 32);
  EXPECT_EQ(c.channels(4), 32);
}

TEST(Hourglass, DepthOneMatchesUnrolledLayers) {
  HourglassConfig c = small_config(1, 4, 2, 8);
  HourglassModel<double> m(c);
  randomize_head(m, 6);
  std::mt19937_64 rng(7);
  const auto img = random_tensor<double>(rng, {1, 1, 8, 8});

  auto block = [](const ResidualBlock<double>& b, const Tensor<double>& x) {
    const auto h = conv2d(relu(conv2d(x, b.conv1.weight, b.conv1.bias, 1, 1)), b.conv2.weight, b.conv2.bias, 1, 1);
    const auto skip = b.projection ? conv2d(x, b.projection->weight, b.projection->bias, 1, 0) : x;
    return relu(add(h, skip));
  };
  const auto s0 = relu(conv2d(img, m.stem().weight, m.stem().bias, 1, 1));
  const auto e0 = block(m.encoder()[0], s0);
  const auto bott = block(m.bottleneck(), maxpool2(e0));
  const auto& gate = m.gates()[0];
  const auto alpha = sigmoid(conv2d(
      relu(add(conv2d(e0, gate.skip_proj.weight, gate.skip_proj.bias, 1, 0),
               upsample_nearest2(conv2d(bott, gate.gate_proj.weight, gate.gate_proj.bias, 1, 0)))),
      gate.psi.weight, gate.psi.bias, 1, 0));
  const auto up = upsample_nearest2(conv2d(bott, m.up_projections()[0].weight, m.up_projections()[0].bias, 1, 0));
  const auto dec = block(m.decoder()[0], add(up, mul(e0, alpha)));
  const auto ref = conv2d(dec, m.head().weight, m.head().bias, 1, 0);

  const auto y = m.forward(img);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], ref[i]);
}

TEST(Hourglass, GateMapsStrictlyInsideUnitInterval) {
  HourglassModel<float> m(small_config(3, 4, 2, 16));
  std::mt19937_64 rng(8);
  std::vector<Tensor<float>> maps;
  m.forward(random_tensor<float>(rng, {2, 1, 16, 16}), &maps);
  ASSERT_EQ(maps.size(), 3u);
  for (const auto& a : maps) {
    EXPECT_EQ(a.dim(1), 1);
    for (float v : a.data()) {
      EXPECT_GT(v, 0.0f);
      EXPECT_LT(v, 1.0f);
    }
  }
}

TEST(Hourglass, ForcedOpenGatesReproduceGateFreeNetwork) {
  HourglassConfig c = small_config(3, 8, 4, 32);
  HourglassModel<float> gated(c);
  randomize_head(gated, 9);
  // Give the gates non-trivial weights first, then force them open.
  std::mt19937_64 rng(10);
  for (const auto& g : gated.gates()) {
    auto w = g.psi.weight;
    for (auto& v : w.data()) v = std::uniform_real_distribution<float>(-1, 1)(rng);
  }
  gated.force_gates_open();
  c.attention_gates = false;
  HourglassModel<float> plain(c);
  plain.load_arrays(gated.to_arrays());
  const auto img = random_tensor<float>(rng, {2, 1, 32, 32});
  const auto a = gated.forward(img), b = plain.forward(img);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, static_cast<double>(std::abs(a[i] - b[i])));
  EXPECT_LT(worst, 1e-4);
}

TEST(Hourglass, ForwardIsDeterministic) {
  HourglassModel<float> m(small_config());
  randomize_head(m, 11);
  std::mt19937_64 rng(12);
  const auto img = random_tensor<float>(rng, {1, 1, 16, 16});
  const auto a = m.forward(img), b = m.forward(img);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Hourglass, SameSeedSameInitialization) {
  HourglassModel<float> a(small_config()), b(small_config());
  auto pa = a.to_arrays(), pb = b.to_arrays();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].values, pb[i].values);
}

namespace {

std::vector<TrainingSample> toy_samples(int n, int size, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(4.0, size - 5.0);
  std::vector<TrainingSample> out;
  for (int i = 0; i < n; ++i) {
    TrainingSample s{Image(size, size, 20.0f), {}};
    for (int j = 0; j < k; ++j) {
      const Point2 p{u(rng), u(rng)};
      s.target.push_back(p);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double d2 = (x - p.x) * (x - p.x) + (y - p.y) * (y - p.y);
          s.frame.at(x, y) += static_cast<float>(200.0 * std::exp(-d2 / 4.0));
        }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(Train, EmptyDatasetThrows) {
  HourglassModel<float> m(small_config());
  try {
    train_hourglass(m, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyDataset);
  }
}

TEST(Train, NonFiniteLossAborts) {
  auto c = small_config(2, 4, 1, 16);
  c.epochs = 2;
  HourglassModel<float> m(c);
  auto data = toy_samples(4, 16, 1, 1);
  data[2].frame.pixels[7] = std::numeric_limits<float>::quiet_NaN();
  const bool was = finite_checks_enabled();
  set_finite_checks(false);
  try {
    train_hourglass(m, data);
    ADD_FAILURE() << "expected NonFiniteLoss";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFiniteLoss);
  }
  set_finite_checks(was);
}

TEST(Train, LossTraceFiniteAndDecreasing) {
  auto c = small_config(2, 8, 2, 16);
  c.epochs = 15;
  c.batch_size = 2;
  HourglassModel<float> m(c);
  const auto r = train_hourglass(m, toy_samples(8, 16, 2, 2));
  ASSERT_EQ(r.epoch_loss.size(), 15u);
  for (double l : r.epoch_loss) EXPECT_TRUE(std::isfinite(l));
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(Train, SameSeedSameWeights) {
  auto c = small_config(2, 4, 2, 16);
  c.epochs = 3;
  c.batch_size = 3;
  c.flip_augment = true;
  const auto data = toy_samples(5, 16, 2, 3);
  TrainOptions opt;
  opt.mirror = {1, 0};
  HourglassModel<float> a(c), b(c);
  train_hourglass(a, data, opt);
  train_hourglass(b, data, opt);
  const auto wa = a.to_arrays(), wb = b.to_arrays();
  for (std::size_t i = 0; i < wa.size(); ++i) EXPECT_EQ(wa[i].values, wb[i].values) << wa[i].name;
}

TEST(Train, FlipAugmentNeedsMirrorTable) {
  auto c = small_config(2, 4, 2, 16);
  c.flip_augment = true;
  HourglassModel<float> m(c);
  EXPECT_THROW(train_hourglass(m, toy_samples(2, 16, 2, 4)), Error);
}

TEST(Train, MemorizesSinglePhantom) {
  PhantomRanges r;
  r.landmarks = 12;
  r.right_fraction = 0.0;
  const Phantom ph = generate_phantoms(1, r, 5).front();
  PipelineSpec spec;
  const TrainingSample s = make_global_sample(ph.image, ph.landmarks, spec);
  TrainingSample all{s.frame, {}};
  const SimilarityTransform g = global_frame_transform(160, 160, 64, 64).inverse();
  for (const auto& p : ph.landmarks.points) all.target.push_back(g.apply(p));

  HourglassConfig c = small_config(3, 8, 12, 64);
  c.epochs = 500;
  c.batch_size = 1;
  c.learning_rate = 2e-3;
  c.lr_final_factor = 0.01;
  HourglassModel<float> m(c);
  train_hourglass(m, {all});
  const auto pred = predict_frames(m, {all.frame}).front();
  const auto schema = make_knee_schema(12);
  const double err = rp2p(schema.make_set(pred), schema.make_set(all.target));
  EXPECT_LT(err, 1.0);
}
