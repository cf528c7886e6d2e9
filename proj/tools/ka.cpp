// ka: synthetic knee phantoms, hourglass training, landmark localization,
// alignment measurement and evaluation reports.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
// Errors are printed to stderr as one line:
//   ka: error code=<Errc> exit=<n> message=<text>

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include "kneealign/kneealign.hpp"

namespace fs = std::filesystem;
using namespace ka;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::IoError, "write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(Errc::IoError, "cannot create output directory " + dir.string());
}

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw Error(Errc::ConfigError, std::string(what) + " is not set in the config");
  if (!fs::is_regular_file(p)) throw Error(Errc::IoError, std::string(what) + " not found: " + p.string());
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  if (!fs::is_regular_file(path)) throw Error(Errc::IoError, "config not found: " + path);
  return RunConfig::load(path);
}

// --threads, else KA_THREADS, else the config, else all cores.
int thread_count(int flag, const RunConfig& cfg) {
  if (flag > 0 || std::getenv("KA_THREADS")) return resolve_threads(flag);
  return cfg.threads > 0 ? cfg.threads : resolve_threads(0);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::string automatic;
  std::string stage;
  std::optional<std::uint64_t> seed;
  std::size_t n = 0;
  int threads = 0;
  bool svg = false;
};

int run_synth(const Options& o) {
  const RunConfig cfg = load_config(o.config);
  const std::uint64_t seed = o.seed.value_or(cfg.seed);
  ensure_dir(o.out);
  const auto rows = make_dataset(o.out, o.n, cfg.synth, seed);
  std::printf("wrote %zu phantoms to %s\n", rows.size(), o.out.c_str());
  return 0;
}

int run_train(const Options& o) {
  RunConfig cfg = load_config(o.config);
  const bool global = o.stage == "global";
  HourglassConfig hc = global ? cfg.global : cfg.local;
  if (o.seed) hc.seed = *o.seed;
  if (!global && cfg.local_frames == LocalFrames::GlobalPrediction) require_file(cfg.global_model, "global_model");
  const Dataset data = load_dataset(o.data, true);
  if (data.schema.count != cfg.synth.landmarks && !global) {
    throw Error(Errc::SchemaMismatch, "dataset has " + std::to_string(data.schema.count) +
                                          " landmarks, config expects " + std::to_string(cfg.synth.landmarks));
  }
  if (!global) hc.landmarks = data.schema.count;
  ensure_dir(o.out);
  const PipelineSpec spec = cfg.pipeline();

  std::vector<TrainingSample> samples;
  if (global) {
    samples = global_training_set(data, spec);
  } else if (cfg.local_frames == LocalFrames::GlobalPrediction) {
    const auto g = HourglassModel<float>::load(cfg.global_model);
    const auto refs = predict_references(g, data, spec);
    samples = local_training_set(data, spec, &refs);
  } else {
    samples = local_training_set(data, spec);
  }

  HourglassModel<float> model(hc);
  TrainOptions opt;
  opt.mirror = hc.flip_augment ? (global ? std::vector<int>{1, 0} : data.schema.mirror) : std::vector<int>{};
  const auto t0 = std::chrono::steady_clock::now();
  opt.on_epoch = [&](int epoch, double loss) {
    std::printf("epoch %d/%d loss %.5f (%.1fs)\n", epoch + 1, hc.epochs, loss, seconds_since(t0));
    std::fflush(stdout);
  };
  const TrainResult r = train_hourglass(model, samples, opt);
  const fs::path weights = fs::path(o.out) / (o.stage + ".kaw");
  model.save(weights);
  write_text(fs::path(o.out) / (o.stage + "_loss.csv"), format_loss_csv(r.epoch_loss));
  std::printf("saved %s (%zu steps, %.1fs)\n", weights.c_str(), r.steps, seconds_since(t0));
  return 0;
}

int run_localize(const Options& o) {
  const RunConfig cfg = load_config(o.config);
  require_file(cfg.global_model, "global_model");
  require_file(cfg.local_model, "local_model");
  const Dataset data = load_dataset(o.data, true, false);
  auto global = std::make_shared<const HourglassModel<float>>(HourglassModel<float>::load(cfg.global_model));
  auto local = std::make_shared<const HourglassModel<float>>(HourglassModel<float>::load(cfg.local_model));
  if (local->config().landmarks != data.schema.count) {
    throw Error(Errc::SchemaMismatch, "local model predicts " + std::to_string(local->config().landmarks) +
                                          " landmarks, dataset schema has " + std::to_string(data.schema.count));
  }
  PipelineSpec spec = cfg.pipeline();
  spec.global_height = global->config().input_height;
  spec.global_width = global->config().input_width;
  spec.local = ReferenceFrameSpec::centered(local->config().input_height, local->config().input_width, cfg.frame_span);
  ensure_dir(o.out);
  const auto items = localize_dataset(data, hourglass_stage(global), hourglass_stage(local), spec,
                                      thread_count(o.threads, cfg));
  std::size_t low = 0;
  for (const auto& it : items) {
    write_pts(fs::path(o.out) / (it.id + ".pts"), it.points);
    low += it.low_confidence;
  }
  write_text(fs::path(o.out) / "localization.csv", format_localization_csv(items));
  std::vector<ManifestRow> rows;
  for (const auto& item : data.items) rows.push_back(item.row);
  write_text(fs::path(o.out) / "manifest.csv", format_manifest(rows));
  write_schema(fs::path(o.out) / "schema.txt", data.schema);
  std::printf("localized %zu images (%zu LowConfidence) into %s\n", items.size(), low, o.out.c_str());
  return 0;
}

std::map<std::string, std::string> read_flags(const fs::path& dir) {
  std::map<std::string, std::string> flags;
  std::ifstream in(dir / "localization.csv");
  std::string line;
  if (!in || !std::getline(in, line)) return flags;
  while (std::getline(in, line)) {
    const auto last = line.rfind(',');
    const auto first = line.find(',');
    if (first == std::string::npos || last == std::string::npos) continue;
    flags[line.substr(0, first)] = line.substr(last + 1);
  }
  return flags;
}

int run_measure(const Options& o) {
  const RunConfig cfg = load_config(o.config);
  const Dataset data = load_dataset(o.data, false);
  const auto flags = read_flags(o.data);
  ensure_dir(o.out);
  std::vector<AlignmentRow> rows(data.items.size());
  parallel_for(data.items.size(), thread_count(o.threads, cfg), [&](std::size_t i) {
    const auto& item = data.items[i];
    const AlignmentResult a = measure_alignment(item.points);
    auto f = flags.find(item.row.id);
    rows[i] = {item.row.id, item.row.side, a.atfa_fts, a.atfa_fnts, f == flags.end() ? "" : f->second};
  });
  write_text(fs::path(o.out) / "alignment.csv", format_alignment_csv(rows));
  std::printf("measured %zu images into %s\n", rows.size(), (fs::path(o.out) / "alignment.csv").c_str());
  return 0;
}

int run_evaluate(const Options& o) {
  const Dataset gt = load_dataset(o.data, false);
  const Dataset automatic = load_dataset(o.automatic, false);
  const auto flags = read_flags(o.automatic);
  std::map<std::string, LocalizedItem> by_id;
  for (const auto& item : automatic.items) {
    auto f = flags.find(item.row.id);
    by_id[item.row.id] = {item.row.id, item.row.side, item.points.points, 1.0,
                          f != flags.end() && f->second == "LowConfidence"};
  }
  const Evaluation ev = evaluate(gt, by_id);
  ensure_dir(o.out);
  const fs::path out(o.out);
  const std::string t1 = format_table1(ev), t2 = format_table2(ev);
  write_text(out / "table1.txt", t1);
  write_text(out / "table2.txt", t2);
  write_text(out / "per_image.csv", format_per_image_csv(ev));
  write_text(out / "summary.txt", format_summary(ev));
  if (o.svg) {
    std::vector<double> fa, fg, na, ng;
    for (const auto& e : ev.images) {
      fa.push_back(e.fts_auto);
      fg.push_back(e.fts_gt);
      na.push_back(e.fnts_auto);
      ng.push_back(e.fnts_gt);
    }
    if (ev.images.size() < 2) throw Error(Errc::TooFewSubjects, "Bland-Altman plot needs at least two images");
    write_text(out / "bland_altman_fts.svg", bland_altman_svg(fa, fg, "aTFA (FTS): automated vs ground truth"));
    write_text(out / "bland_altman_fnts.svg", bland_altman_svg(na, ng, "aTFA (FNTS): automated vs ground truth"));
  }
  std::printf("%s\n%s", t1.c_str(), t2.c_str());
  return 0;
}

int run_gradcheck(const Options& o) {
  GradCheckOptions opt;
  if (o.seed) opt.seed = *o.seed;
  const auto results = run_standard_gradchecks(opt);
  const std::string table = format_gradcheck_table(results);
  ensure_dir(o.out);
  write_text(fs::path(o.out) / "gradcheck.txt", table);
  std::printf("%s", table.c_str());
  for (const auto& r : results) {
    if (!r.passed) throw Error(Errc::GradCheckFailed, "gradient check failed: " + r.name);
  }
  return 0;
}

int fail(Errc code, const std::string& message) {
  const int exit_code = is_numerical(code) ? 3 : 2;
  std::string flat = message;
  for (auto& c : flat) {
    if (c == '\n') c = ' ';
  }
  std::fprintf(stderr, "ka: error code=%s exit=%d message=%s\n", std::string(to_string(code)).c_str(), exit_code,
               flat.c_str());
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knee alignment from synthetic AP radiographs"};
  app.require_subcommand(1);
  Options o;
  auto seed_flag = [&](CLI::App* sub, bool required) {
    auto* opt = sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { o.seed = v; }, "Random seed");
    if (required) opt->required();
  };

  auto* synth = app.add_subcommand("synth", "Generate a phantom dataset");
  synth->add_option("--n", o.n, "Number of phantoms")->required()->check(CLI::PositiveNumber);
  synth->add_option("--out", o.out, "Output dataset directory")->required();
  synth->add_option("--config", o.config, "Run config");
  seed_flag(synth, true);

  auto* train = app.add_subcommand("train", "Train the global or local hourglass");
  train->add_option("--stage", o.stage, "global | local")->required()->check(CLI::IsMember({"global", "local"}));
  train->add_option("--config", o.config, "Run config")->required();
  train->add_option("--data", o.data, "Training dataset directory")->required();
  train->add_option("--out", o.out, "Output directory")->required();
  seed_flag(train, false);

  auto* localize = app.add_subcommand("localize", "Localize landmarks with trained models");
  localize->add_option("--config", o.config, "Run config naming global_model and local_model")->required();
  localize->add_option("--data", o.data, "Dataset directory (images, manifest, schema)")->required();
  localize->add_option("--out", o.out, "Output directory")->required();
  localize->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* measure = app.add_subcommand("measure", "Measure aTFA from landmark files");
  measure->add_option("--data", o.data, "Directory with .pts files, manifest and schema")->required();
  measure->add_option("--out", o.out, "Output directory")->required();
  measure->add_option("--config", o.config, "Run config");
  measure->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Compare automatic landmarks against ground truth");
  evaluate_cmd->add_option("--data", o.data, "Ground-truth dataset directory")->required();
  evaluate_cmd->add_option("--auto", o.automatic, "Directory with automatic .pts files")->required();
  evaluate_cmd->add_option("--out", o.out, "Output directory")->required();
  evaluate_cmd->add_option("--config", o.config, "Run config");
  evaluate_cmd->add_flag("--svg", o.svg, "Also write Bland-Altman plots");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--out", o.out, "Output directory")->required();
  seed_flag(gradcheck, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(Errc::ConfigError, e.what());
  }

  try {
    if (*synth) return run_synth(o);
    if (*train) return run_train(o);
    if (*localize) return run_localize(o);
    if (*measure) return run_measure(o);
    if (*evaluate_cmd) return run_evaluate(o);
    if (*gradcheck) return run_gradcheck(o);
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail(Errc::IoError, e.what());
  }
  return 0;
}
