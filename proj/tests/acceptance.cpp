// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--out DIR] [--threads N]
//
// Criteria 4 to 6 train the global and local models on 200 phantoms and
// evaluate on 50 held-out phantoms; artifacts (datasets, checkpoints,
// reports) go to DIR. Exit status is 0 only when every criterion passes.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kneealign/kneealign.hpp"

namespace fs = std::filesystem;
using namespace ka;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  Outcome outcome;
};

void log(const std::string& s) {
  std::fprintf(stderr, "  .. %s\n", s.c_str());
  std::fflush(stderr);
}

// ---- criterion 2 oracles ---------------------------------------------------------

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int stride,
                          int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), o = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(n) * o * oh * ow);
  for (int in = 0; in < n; ++in)
    for (int oc = 0; oc < o; ++oc)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b[static_cast<std::size_t>(oc)];
          for (int ic = 0; ic < c; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int sy = y * stride + ky - pad, sx = xx * stride + kx - pad;
                if (sy < 0 || sx < 0 || sy >= h || sx >= wd) continue;
                acc += w[static_cast<std::size_t>(((oc * c + ic) * k + ky) * k + kx)] *
                       x[static_cast<std::size_t>(((in * c + ic) * h + sy) * wd + sx)];
              }
          out[static_cast<std::size_t>(((in * o + oc) * oh + y) * ow + xx)] = acc;
        }
  return Tensor<double>({n, o, oh, ow}, std::move(out));
}

double icc_anova_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  const double k = 2.0, dn = static_cast<double>(n);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) grand += a[i] + b[i];
  grand /= k * dn;
  double ssr = 0.0, sst = 0.0, ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m = (a[i] + b[i]) / k;
    ssr += k * (m - grand) * (m - grand);
    sst += (a[i] - grand) * (a[i] - grand) + (b[i] - grand) * (b[i] - grand);
    ma += a[i] / dn;
    mb += b[i] / dn;
  }
  const double ssc = dn * ((ma - grand) * (ma - grand) + (mb - grand) * (mb - grand));
  const double msr = ssr / (dn - 1), msc = ssc / (k - 1), mse = (sst - ssr - ssc) / ((dn - 1) * (k - 1));
  return (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / dn);
}

// Power series for I_x(a, b), evaluated on whichever tail keeps x <= 1/2.
double incomplete_beta_series(double a, double b, double x) {
  if (x > 0.5) return 1.0 - incomplete_beta_series(b, a, 1.0 - x);
  double term = 1.0, total = 1.0;
  for (int n = 1; n < 100000; ++n) {
    term *= (n - b) / n * x;
    const double add = term * a / (a + n);
    total += add;
    if (std::abs(add) < 1e-17 * std::abs(total)) break;
  }
  const double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  return std::exp(a * std::log(x) - log_beta) / a * total;
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  const auto results = run_standard_gradchecks();
  const double secs = seconds_since(t0);
  bool ok = secs < 120.0 && !results.empty();
  double worst = 0.0;
  int fewest = 1 << 30;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    fewest = std::min(fewest, r.checked);
    if (!r.passed || r.checked < 50) {
      ok = false;
      failed += " " + r.name;
    }
  }
  return {ok, fmt("%zu checks, worst rel err %.2e (tol 1e-3), >= %d params each, %.1fs%s%s", results.size(), worst,
                  fewest, secs, failed.empty() ? "" : "; failed:", failed.c_str())};
}

Outcome criterion_oracles() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random = [&](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = u(rng);
    return Tensor<double>(std::move(s), std::move(v));
  };
  double conv_err = 0.0;
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 0}, std::pair{1, 0}, std::pair{2, 1}}) {
    const auto x = random({2, 3, 9, 7}), w = random({4, 3, 3, 3}), b = random({4});
    const auto fast = conv2d(x, w, b, stride, pad), slow = naive_conv(x, w, b, stride, pad);
    if (fast.shape() != slow.shape()) return {false, "conv2d output shape differs from the naive oracle"};
    for (std::size_t i = 0; i < fast.numel(); ++i) conv_err = std::max(conv_err, std::abs(fast[i] - slow[i]));
  }

  const std::vector<std::pair<std::vector<double>, std::vector<double>>> tables{
      {{1, 2, 3}, {2, 3, 4}},
      {{9.5, 4.2, 7.7, 1.3, 5.0, 6.6}, {9.1, 4.9, 7.0, 2.0, 5.4, 6.1}},
      {{3, -1, 4, 1, -5, 9, 2, 6}, {2, -2, 5, 1, -4, 8, 3, 5}},
      {{10, 12, 11, 15, 9, 14, 13}, {14, 11, 15, 10, 12, 9, 13}},
      {{0.1, 0.5, 0.9, 1.3, 1.7}, {1.1, 1.4, 2.1, 2.2, 2.8}},
      {{-3.5, 0.25, 7.0, 12.5, -8.0, 4.4}, {-3.0, 0.5, 6.0, 13.0, -7.5, 4.0}},
  };
  double icc_err = 0.0;
  for (const auto& [a, b] : tables) {
    icc_err = std::max(icc_err, std::abs(icc_2_1(a, b).value - std::clamp(icc_anova_oracle(a, b), -1.0, 1.0)));
  }

  double fq_err = 0.0;
  for (double p : {0.025, 0.5, 0.9, 0.975, 0.995}) {
    for (auto [d1, d2] : {std::pair{1.0, 1.0}, std::pair{4.0, 7.3}, std::pair{49.0, 12.5}, std::pair{2.5, 100.0},
                          std::pair{30.0, 30.0}}) {
      const double q = f_quantile(p, d1, d2);
      fq_err = std::max(fq_err, std::abs(incomplete_beta_series(0.5 * d1, 0.5 * d2, d1 * q / (d1 * q + d2)) - p));
    }
  }

  double poly_err = 0.0;
  std::uniform_real_distribution<double> coord(0.0, 1.0);
  for (int t = 0; t < 30; ++t) {
    Polyline c;
    for (int i = 0; i < 4; ++i) c.points.push_back({coord(rng), coord(rng)});
    constexpr int kSamples = 20000;
    std::vector<Point2> dense;
    for (std::size_t i = 1; i < c.points.size(); ++i)
      for (int j = 0; j <= kSamples; ++j)
        dense.push_back(c.points[i - 1] + (static_cast<double>(j) / kSamples) * (c.points[i] - c.points[i - 1]));
    for (int q = 0; q < 20; ++q) {
      const Point2 p{2.0 * coord(rng) - 0.5, 2.0 * coord(rng) - 0.5};
      double brute = 1e300;
      for (const auto& d : dense) brute = std::min(brute, distance(p, d));
      poly_err = std::max(poly_err, std::abs(point_to_polyline_distance(p, c) - brute));
    }
  }
  const bool ok = conv_err < 1e-5 && icc_err < 1e-9 && fq_err < 1e-8 && poly_err < 1e-3;
  return {ok, fmt("conv2d %.1e (<1e-5), ICC on %zu tables %.1e (<1e-9), F quantile %.1e (<1e-8), polyline %.1e (<1e-3)",
                  conv_err, tables.size(), icc_err, fq_err, poly_err)};
}

Outcome criterion_closure() {
  PhantomRanges r;
  r.post_op_fraction = 0.3;
  double worst = 0.0;
  for (auto seed : phantom_seeds(500, 777)) {
    const PhantomParams p = random_phantom_params(r, seed);
    const Phantom ph = generate_phantom(p);
    worst = std::max({worst, std::abs(atfa_fts(ph.landmarks) - p.true_atfa), std::abs(atfa_fnts(ph.landmarks) - p.true_atfa)});
  }
  return {worst < 0.05, fmt("500 phantoms, max |aTFA(gt) - true| = %.2e deg (< 0.05)", worst)};
}

// ---- criteria 4 to 8: the desk-scale experiment ------------------------------------

struct Experiment {
  RunConfig cfg;
  PipelineSpec spec;
  Dataset train, test;
  std::unique_ptr<HourglassModel<float>> global, local, local_plain;
  std::vector<LocalizedItem> predictions, plain_predictions;
  Evaluation eval, plain_eval;
  double main_seconds = 0.0, ablation_seconds = 0.0;
  int threads = 1;
};

std::vector<LocalizedItem> run_localization(const Experiment& e, const HourglassModel<float>& local, int threads) {
  auto g = std::make_shared<const HourglassModel<float>>(e.global->cast<float>());
  auto l = std::make_shared<const HourglassModel<float>>(local.cast<float>());
  return localize_dataset(e.test, hourglass_stage(g), hourglass_stage(l), e.spec, threads);
}

Evaluation evaluate_items(const Dataset& gt, const std::vector<LocalizedItem>& items) {
  std::map<std::string, LocalizedItem> by_id;
  for (const auto& it : items) by_id[it.id] = it;
  return evaluate(gt, by_id);
}

void write_reports(const fs::path& dir, const Evaluation& ev, const std::string& method) {
  fs::create_directories(dir);
  write_text(dir / "table1.txt", format_table1(ev, method));
  write_text(dir / "table2.txt", format_table2(ev));
  write_text(dir / "per_image.csv", format_per_image_csv(ev));
  write_text(dir / "summary.txt", format_summary(ev));
  std::vector<double> fa, fg, na, ng;
  for (const auto& e : ev.images) {
    fa.push_back(e.fts_auto);
    fg.push_back(e.fts_gt);
    na.push_back(e.fnts_auto);
    ng.push_back(e.fnts_gt);
  }
  write_text(dir / "bland_altman_fts.svg", bland_altman_svg(fa, fg, "aTFA (FTS): automated vs ground truth"));
  write_text(dir / "bland_altman_fnts.svg", bland_altman_svg(na, ng, "aTFA (FNTS): automated vs ground truth"));
}

void run_experiment(Experiment& e, const fs::path& out) {
  const auto t0 = Clock::now();
  make_dataset(out / "train", 200, e.cfg.synth, 101);
  make_dataset(out / "test", 50, e.cfg.synth, 202);
  e.train = load_dataset(out / "train", true);
  e.test = load_dataset(out / "test", true);
  log(fmt("datasets ready (%.1fs)", seconds_since(t0)));

  auto progress = [t0](const char* stage) {
    return [t0, stage](int epoch, double loss) {
      log(fmt("%s epoch %d loss %.4f (%.0fs)", stage, epoch + 1, loss, seconds_since(t0)));
    };
  };
  e.global = std::make_unique<HourglassModel<float>>(e.cfg.global);
  TrainOptions gopt;
  gopt.on_epoch = progress("global");
  train_hourglass(*e.global, global_training_set(e.train, e.spec), gopt);

  const auto refs = predict_references(*e.global, e.train, e.spec);
  const auto local_samples = e.cfg.local_frames == LocalFrames::GlobalPrediction
                                 ? local_training_set(e.train, e.spec, &refs)
                                 : local_training_set(e.train, e.spec);
  e.local = std::make_unique<HourglassModel<float>>(e.cfg.local);
  TrainOptions lopt;
  lopt.on_epoch = progress("local");
  train_hourglass(*e.local, local_samples, lopt);

  e.predictions = run_localization(e, *e.local, e.threads);
  e.eval = evaluate_items(e.test, e.predictions);
  e.main_seconds = seconds_since(t0);
  log(fmt("main pipeline done (%.0fs)", e.main_seconds));

  fs::create_directories(out / "models");
  e.global->save(out / "models" / "global.kaw");
  e.local->save(out / "models" / "local.kaw");
  fs::create_directories(out / "localized");
  for (const auto& it : e.predictions) write_pts(out / "localized" / (it.id + ".pts"), it.points);
  write_text(out / "localized" / "localization.csv", format_localization_csv(e.predictions));
  write_reports(out / "reports", e.eval, "This study (desk scale)");

  // Ablation: identical local training without attention gates.
  const auto t1 = Clock::now();
  HourglassConfig plain = e.cfg.local;
  plain.attention_gates = false;
  e.local_plain = std::make_unique<HourglassModel<float>>(plain);
  TrainOptions popt;
  popt.on_epoch = progress("local (no gates)");
  train_hourglass(*e.local_plain, local_samples, popt);
  e.plain_predictions = run_localization(e, *e.local_plain, e.threads);
  e.plain_eval = evaluate_items(e.test, e.plain_predictions);
  e.ablation_seconds = seconds_since(t1);
  e.local_plain->save(out / "models" / "local_no_gates.kaw");
  write_reports(out / "reports_no_gates", e.plain_eval, "Hourglass without AGs");
}

Outcome criterion_table1(const Experiment& e) {
  const auto& l = e.eval.subsets.front().localization;
  const bool ok = l.p2p.mean <= 3.0 && l.p2c.mean <= 1.5 && e.main_seconds <= 900.0;
  return {ok, fmt("50 held-out: rP2P mean %.2f%% (<= 3.0), rP2C mean %.2f%% (<= 1.5); median %.2f%%/%.2f%%, "
                  "95%%ile %.2f%%/%.2f%%; train+eval %.0fs (<= 900)",
                  l.p2p.mean, l.p2c.mean, l.p2p.median, l.p2c.median, l.p2p.p95, l.p2c.p95, e.main_seconds)};
}

Outcome criterion_table2(const Experiment& e) {
  const auto& s = e.eval.subsets.front();
  auto good = [](const AgreementReport& r) {
    return r.icc.value >= 0.97 && r.mad.value <= 1.0 && std::abs(r.baa.bias) <= 0.3;
  };
  return {good(s.fts) && good(s.fnts),
          fmt("FTS ICC %.3f MAD %.2f bias %+.2f; FNTS ICC %.3f MAD %.2f bias %+.2f (need ICC >= 0.97, MAD <= 1.0, "
              "|bias| <= 0.3)",
              s.fts.icc.value, s.fts.mad.value, s.fts.baa.bias, s.fnts.icc.value, s.fnts.mad.value, s.fnts.baa.bias)};
}

Outcome criterion_ablation(const Experiment& e) {
  // Open the trained gates and load the same weights into a gate-free network.
  HourglassModel<float> opened = e.local->cast<float>();
  opened.force_gates_open();
  HourglassConfig pc = e.local->config();
  pc.attention_gates = false;
  HourglassModel<float> plain(pc);
  plain.load_arrays(opened.to_arrays());
  double worst = 0.0;
  {
    NoGradGuard no_grad;
    std::vector<Image> frames;
    for (std::size_t i = 0; i < 8; ++i) {
      const auto [img, pts] = left_view(e.test.items[i], e.test.schema);
      const auto [p0, p1] = pts.pair(pts.roles.tibial_plateau);
      frames.push_back(make_local_sample(img, pts, p0, p1, e.spec).frame);
    }
    for (const auto& f : frames) {
      const auto a = opened.forward(image_tensor<float>(f)), b = plain.forward(image_tensor<float>(f));
      for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, static_cast<double>(std::abs(a[i] - b[i])));
    }
  }
  const double gated = e.eval.subsets.front().localization.p2p.mean;
  const double ungated = e.plain_eval.subsets.front().localization.p2p.mean;
  const bool ok = worst < 1e-4 && std::isfinite(gated) && std::isfinite(ungated);
  return {ok, fmt("forced-open vs gate-free max |diff| %.1e (< 1e-4); held-out rP2P with AGs %.2f%%, without %.2f%% "
                  "(ablation training %.0fs)",
                  worst, gated, ungated, e.ablation_seconds)};
}

Outcome criterion_invariants(const Experiment& e) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double sim = 0.0, anti = 0.0, round_trip = 0.0;
  bool flip_exact = true, p2p_ge_p2c = true;
  std::vector<LandmarkSet> sets;
  for (const auto& item : e.test.items) sets.push_back(item.points);
  for (const auto& it : e.predictions) sets.push_back(e.test.schema.make_set(it.points, it.side));
  for (const auto& s : sets) {
    const SimilarityTransform t(std::exp(u(rng)), 3.0 * u(rng), {200.0 * u(rng), 200.0 * u(rng)});
    LandmarkSet moved = s;
    for (auto& p : moved.points) p = t.apply(p);
    const auto a = measure_alignment(s), b = measure_alignment(moved);
    sim = std::max({sim, std::abs(a.atfa_fts - b.atfa_fts), std::abs(a.atfa_fnts - b.atfa_fnts)});
    LandmarkSet mirrored = mirror_landmarks(s, e.test.schema, 160);
    mirrored.side = s.side;
    const auto m = measure_alignment(mirrored);
    anti = std::max({anti, std::abs(m.atfa_fts + a.atfa_fts), std::abs(m.atfa_fnts + a.atfa_fnts)});
    for (const auto& p : s.points) round_trip = std::max(round_trip, distance(t.inverse().apply(t.apply(p)), p));
    const auto [p0, p1] = s.pair(s.roles.tibial_plateau);
    const auto f = local_frame_transform(p0, p1, e.spec.local);
    round_trip = std::max({round_trip, distance(f.apply(e.spec.local.q0), p0), distance(f.apply(e.spec.local.q1), p1)});
  }
  for (const auto& item : e.test.items) {
    const auto once = flip_to_left(item.image, item.points, e.test.schema);
    const auto twice = flip_to_left(once.first, once.second, e.test.schema);
    flip_exact = flip_exact && twice.first == item.image && twice.second.points == item.points.points &&
                 twice.second.side == item.points.side;
  }
  for (const auto& img : e.eval.images) p2p_ge_p2c = p2p_ge_p2c && img.rp2p >= img.rp2c;

  // Determinism: data, training and localization rerun bit-identically.
  bool deterministic = true;
  {
    const auto a = generate_phantoms(20, e.cfg.synth, 202), b = generate_phantoms(20, e.cfg.synth, 202);
    for (std::size_t i = 0; i < a.size(); ++i) {
      deterministic = deterministic && a[i].image == b[i].image && a[i].landmarks.points == b[i].landmarks.points;
      deterministic = deterministic && a[i].image == e.test.items[i].image;
    }
    HourglassConfig small = e.cfg.global;
    small.epochs = 2;
    std::vector<TrainingSample> samples = global_training_set(e.train, e.spec);
    samples.resize(16);
    HourglassModel<float> m1(small), m2(small);
    train_hourglass(m1, samples);
    train_hourglass(m2, samples);
    const auto w1 = m1.to_arrays(), w2 = m2.to_arrays();
    for (std::size_t i = 0; i < w1.size(); ++i) deterministic = deterministic && w1[i].values == w2[i].values;
    const auto again = run_localization(e, *e.local, 1);
    for (std::size_t i = 0; i < again.size(); ++i) {
      deterministic = deterministic && again[i].points == e.predictions[i].points;
    }
  }
  const bool ok = sim < 1e-7 && anti < 1e-9 && flip_exact && p2p_ge_p2c && round_trip < 1e-9 && deterministic;
  return {ok, fmt("similarity %.1e (<1e-7), mirror %.1e (<1e-9), flip involution %s, rP2P >= rP2C on all %zu images %s, "
                  "round trips %.1e (<1e-9), reruns %s",
                  sim, anti, flip_exact ? "exact" : "BROKEN", e.eval.images.size(), p2p_ge_p2c ? "yes" : "NO",
                  round_trip, deterministic ? "bit-identical" : "DIFFER")};
}

Outcome criterion_formats(const Experiment& e, const fs::path& out) {
  bool ok = true;
  std::size_t arrays = 0, files = 0;
  for (const auto* m : {e.global.get(), e.local.get(), e.local_plain.get()}) {
    const fs::path p = out / "roundtrip.kaw";
    m->save(p);
    const auto back = HourglassModel<float>::load(p);
    const auto a = m->to_arrays(), b = back.to_arrays();
    for (std::size_t i = 0; i < a.size(); ++i) {
      ok = ok && a[i].name == b[i].name && a[i].shape == b[i].shape && a[i].values.size() == b[i].values.size() &&
           std::memcmp(a[i].values.data(), b[i].values.data(), a[i].values.size() * sizeof(float)) == 0;
      ++arrays;
    }
    ok = ok && slurp(p) == encode_weights(back.to_arrays());
    fs::remove(p);
    fs::remove(HourglassModel<float>::sidecar_path(p));
  }
  for (const auto& it : e.predictions) {
    const fs::path p = out / "roundtrip.pts";
    write_pts(p, it.points);
    ok = ok && read_pts(p) == it.points;
    ++files;
    fs::remove(p);
  }
  return {ok, fmt("%zu weight tensors bit-exact through KAW1, %zu .pts files value-exact", arrays, files)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  std::string out = "acceptance_run";
  int threads = 0;
  app.add_option("--out", out, "Artifact directory");
  app.add_option("--threads", threads, "Worker threads for localization");
  CLI11_PARSE(app, argc, argv);
  const fs::path dir(out);
  fs::create_directories(dir);

  std::vector<Criterion> criteria{{1, "gradient fidelity", {}},   {2, "oracle equivalence", {}},
                                  {3, "generator closure", {}},   {4, "localization accuracy", {}},
                                  {5, "aTFA agreement", {}}, {6, "attention-gate ablation", {}},
                                  {7, "invariant suites", {}},    {8, "format round trips", {}}};
  auto guarded = [](const std::function<Outcome()>& fn) {
    try {
      return fn();
    } catch (const std::exception& ex) {
      return Outcome{false, std::string("error: ") + ex.what()};
    }
  };

  log("criterion 1");
  criteria[0].outcome = guarded(criterion_gradients);
  log("criterion 2");
  criteria[1].outcome = guarded(criterion_oracles);
  log("criterion 3");
  criteria[2].outcome = guarded(criterion_closure);

  Experiment e;
  e.spec = e.cfg.pipeline();
  e.threads = resolve_threads(threads);
  const Outcome exp = guarded([&] {
    run_experiment(e, dir);
    return Outcome{true, ""};
  });
  if (exp.pass) {
    criteria[3].outcome = guarded([&] { return criterion_table1(e); });
    criteria[4].outcome = guarded([&] { return criterion_table2(e); });
    criteria[5].outcome = guarded([&] { return criterion_ablation(e); });
    criteria[6].outcome = guarded([&] { return criterion_invariants(e); });
    criteria[7].outcome = guarded([&] { return criterion_formats(e, dir); });
  } else {
    for (std::size_t i = 3; i < criteria.size(); ++i) criteria[i].outcome = {false, "experiment failed: " + exp.detail};
  }

  std::string report;
  bool all = true;
  for (const auto& c : criteria) {
    report += fmt("%s criterion %d %s: %s\n", c.outcome.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                  c.outcome.detail.c_str());
    all = all && c.outcome.pass;
  }
  std::printf("%s", report.c_str());
  if (exp.pass) std::printf("\n%s\n%s", format_table1(e.eval).c_str(), format_table2(e.eval).c_str());
  write_text(dir / "acceptance.txt", report);
  return all ? 0 : 1;
}
