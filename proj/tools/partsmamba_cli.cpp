// partsmamba {train|eval|check|maskgen|synth} [options]
//
// Exit codes: 0 success, 1 verification or numeric failure, 2 usage or
// configuration error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "partsmamba/checkpoint.hpp"
#include "partsmamba/config.hpp"
#include "partsmamba/occlusion.hpp"
#include "partsmamba/skeleton_data.hpp"
#include "partsmamba/ssm.hpp"
#include "partsmamba/train.hpp"
#include "partsmamba/verify.hpp"

namespace fs = std::filesystem;
using namespace partsmamba;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string data;
  std::string occlusion;
  std::string ckpt;
  std::string out = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t classes = 4;
  std::size_t samples = 50;
  bool inject_fault = false;
};

void require_exists(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("--") + what + " is required");
  if (!fs::exists(path)) throw UsageError(std::string(what) + " path does not exist: " + path);
}

RunSettings resolve_settings(const Options& o) {
  RunSettings s;
  if (!o.config.empty()) {
    require_exists(o.config, "config");
    s = load_settings(o.config);
  }
  if (o.seed_set) s.model.seed = o.seed;
  return s;
}

std::vector<SkeletonClip> load_clips(const std::string& path) {
  require_exists(path, "data");
  if (!fs::is_directory(path)) return load_dataset(path);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.path().extension() == ".skeleton") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SkeletonClip> clips;
  for (const auto& f : files) clips.push_back(load_ntu_skeleton(f));
  return clips;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw UsageError("cannot write " + path.string());
  return out;
}

int cmd_train(const Options& o) {
  const RunSettings s = resolve_settings(o);
  const OcclusionPolicy policy = parse_policy(o.occlusion.empty() ? "none" : o.occlusion);
  const SkeletonSpec skeleton = load_skeleton(s.model);
  const auto samples = prepare_samples(load_clips(o.data), s.model);
  fs::create_directories(o.out);

  const std::string resolved = settings_to_text(s);
  std::cout << resolved;
  open_out(fs::path(o.out) / "config.txt") << resolved;

  auto metrics = open_out(fs::path(o.out) / "metrics.jsonl");
  auto on_epoch = [&](const EpochMetrics& m) {
    const std::string line = metrics_line(m, s.train.record_time);
    metrics << line << '\n' << std::flush;
    std::cout << line << '\n';
  };
  TrainResult r = train_two_step(samples, s, skeleton, policy, on_epoch);
  save_checkpoint(fs::path(o.out) / "gcn.ckpt", r.gcn, "gcn");
  save_checkpoint(fs::path(o.out) / "hybrid.ckpt", r.hybrid, "hybrid");
  std::cout << "wrote " << (fs::path(o.out) / "gcn.ckpt").string() << " and "
            << (fs::path(o.out) / "hybrid.ckpt").string() << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  require_exists(o.ckpt, "ckpt");
  const std::string spec = o.occlusion.empty() ? "none" : o.occlusion;
  parse_occlusion_spec(spec);
  const LoadedCheckpoint ck = load_checkpoint(o.ckpt);
  const ModelConfig& cfg = ck.model.config();
  const SkeletonSpec skeleton = load_skeleton(cfg);
  const auto samples = prepare_samples(load_clips(o.data), cfg);
  const std::uint64_t seed = o.seed_set ? o.seed : cfg.seed;
  const EvalReport report = evaluate_spec(ck.model, samples, spec, skeleton.occlusion, seed);
  const auto lines = metrics_lines(report, "eval");
  std::ofstream metrics;
  if (o.out != ".") {
    fs::create_directories(o.out);
    metrics = open_out(fs::path(o.out) / "eval.jsonl", std::ios::app);
  }
  for (const auto& l : lines) {
    std::cout << l << '\n';
    if (metrics.is_open()) metrics << l << '\n';
  }
  return 0;
}

int cmd_check(const Options& o) {
  set_scan_fault_injection(o.inject_fault);
  const auto results = run_checks(o.seed);
  std::cout << format_report(results);
  const bool ok = std::all_of(results.begin(), results.end(),
                              [](const CheckResult& r) { return r.passed; });
  return ok ? 0 : kExitFailure;
}

int cmd_maskgen(const Options& o) {
  const RunSettings s = resolve_settings(o);
  const std::string spec_text = o.occlusion.empty() ? "none" : o.occlusion;
  const OcclusionSpec spec = parse_occlusion_spec(spec_text);
  const SkeletonSpec skeleton = load_skeleton(s.model);
  const std::uint64_t seed = s.model.seed;
  const OcclusionMask mask =
      make_mask(spec, skeleton.occlusion, s.model.joints, s.model.window, seed);
  const std::string text = format_mask(mask, spec_text, seed);
  if (o.out == ".") {
    std::cout << text;
  } else {
    fs::create_directories(o.out);
    open_out(fs::path(o.out) / "mask.txt") << text;
  }
  return 0;
}

int cmd_synth(const Options& o) {
  if (o.classes < 2) throw UsageError("--classes must be at least 2");
  const auto clips = synth_dataset(o.classes, o.samples, o.seed);
  fs::create_directories(o.out);
  const fs::path path = fs::path(o.out) / "dataset.txt";
  save_dataset(path, clips);
  std::cout << "wrote " << clips.size() << " clips to " << path.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Part-wise selective-scan skeleton action recognition"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Config file (key = value lines)");
    sub->add_option("--seed", o.seed, "Seed")->each([&](const std::string&) { o.seed_set = true; });
    sub->add_option("--out", o.out, "Output directory");
  };
  auto* train = app.add_subcommand("train", "Two-step training");
  add_common(train);
  train->add_option("--data", o.data, "Dataset file or directory of .skeleton files");
  train->add_option("--occlusion", o.occlusion, "Training policy: none or parts-masked");

  auto* eval = app.add_subcommand("eval", "Top-1 accuracy under an occlusion spec");
  add_common(eval);
  eval->add_option("--data", o.data, "Dataset file or directory of .skeleton files");
  eval->add_option("--ckpt", o.ckpt, "Checkpoint to evaluate");
  eval->add_option("--occlusion", o.occlusion, kOcclusionGrammar);

  auto* check = app.add_subcommand("check", "Run the verification suite");
  add_common(check);
  check->add_flag("--inject-fault", o.inject_fault)->group("");

  auto* maskgen = app.add_subcommand("maskgen", "Write an occlusion mask grid");
  add_common(maskgen);
  maskgen->add_option("--occlusion", o.occlusion, kOcclusionGrammar);

  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  add_common(synth);
  synth->add_option("--classes", o.classes, "Number of classes");
  synth->add_option("--samples", o.samples, "Samples per class");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*check) return cmd_check(o);
    if (*maskgen) return cmd_maskgen(o);
    if (*synth) return cmd_synth(o);
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
