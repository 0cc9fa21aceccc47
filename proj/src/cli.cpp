#include "msseg/cli.hpp"

#include <cstdio>
#include <fstream>
#include <optional>

#include "CLI11.hpp"
#include "msseg/config.hpp"
#include "msseg/dataset.hpp"
#include "msseg/error.hpp"
#include "msseg/gradcheck.hpp"
#include "msseg/inference.hpp"
#include "msseg/metrics.hpp"
#include "msseg/trainer.hpp"

namespace msseg {

namespace fs = std::filesystem;

namespace {

struct SynthArgs {
  std::string out;
  int cases = 3;
  std::vector<int> size{32, 32, 32};
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> iterations;
  std::optional<std::string> precision;
  std::optional<int> producers;
  bool paper_exact_dice = false;
};

struct InferArgs {
  std::string model, case_dir, out;
  int threads = 1;
  bool probabilities = false;
};

struct EvaluateArgs {
  std::string pred, truth, out;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::string precision = "double";
  int seeds = 5;
  std::string corrupt;
};

int run_synth(const SynthArgs& a, std::ostream& out) {
  const Shape3 size{a.size[0], a.size[1], a.size[2]};
  write_synthetic_dataset(a.out, a.cases, size, a.seed);
  out << "wrote " << a.cases << " cases of " << size.str() << " to " << a.out << "\n";
  return kExitOk;
}

template <typename Real>
int train_with(const RunConfig& cfg, const std::vector<PreparedCase>& cases, const fs::path& out_dir,
               std::ostream& out) {
  TrainOptions<Real> opt;
  opt.out_dir = out_dir;
  const std::int64_t every = std::max<std::int64_t>(1, cfg.train.iterations / 10);
  opt.on_record = [&](const TrainLogRecord& r) {
    if (r.iteration == 1 || r.iteration % every == 0 || r.iteration == cfg.train.iterations) {
      char line[128];
      std::snprintf(line, sizeof line, "iter %6lld  loss %.5f  %.1fs", static_cast<long long>(r.iteration), r.total,
                    r.seconds);
      out << line << "\n" << std::flush;
    }
  };
  const auto result = train<Real>(cases, cfg.train, opt);
  out << "model written to " << (out_dir / "model.ckpt").string() << " (" << result.net.parameter_count()
      << " parameters)\n";
  return kExitOk;
}

int run_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.iterations) cfg.train.iterations = *a.iterations;
  if (a.precision) cfg.precision = *a.precision;
  if (a.producers) cfg.train.producers = *a.producers;
  if (a.paper_exact_dice) cfg.train.loss.paper_exact_dice = true;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, a.config + " with overrides: " + e.what());
  }

  const NetworkConfig& net = cfg.train.network;
  const auto ids = list_labeled_cases(a.data);
  if (ids.empty()) throw Error(ErrorCode::MissingFile, "no labeled cases under " + a.data);
  const LabelRemap remap = net.num_classes == 4 ? LabelRemap() : LabelRemap::identity(net.num_classes);
  const GaussianKernel label_kernel = cfg.train.label_kernel();
  std::vector<PreparedCase> cases;
  for (const auto& id : ids) {
    const CaseData c = load_case(fs::path(a.data) / id, default_modality_names(net.num_modalities));
    cases.push_back(prepare_case(id, c.modalities, remap.to_internal(c.labels), net.num_classes, label_kernel));
  }

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + a.out + ": " + ec.message());
  std::ofstream(fs::path(a.out) / "config.json") << to_json(cfg).dump(2) << "\n";
  out << "training on " << cases.size() << " cases, " << cfg.train.iterations << " iterations, " << cfg.precision
      << " precision\n";
  return cfg.precision == "double" ? train_with<double>(cfg, cases, a.out, out)
                                   : train_with<float>(cfg, cases, a.out, out);
}

template <typename Real>
int infer_with(const InferArgs& a, std::ostream& out) {
  const Network<Real> net = load_checkpoint<Real>(a.model);
  const CaseData c = load_case(a.case_dir, net.modality_names, false);
  InferenceOptions opt;
  opt.threads = a.threads;
  const SegmentationResult r = segment_volume(net, c.modalities, c.id, opt);

  const fs::path dir = fs::path(a.out) / c.id;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  save_label_map(export_labels(net, r), dir / kLabelFile);
  if (a.probabilities) {
    for (int k = 0; k < r.probabilities.classes(); ++k) {
      save_volume(r.probabilities.maps[k], dir / ("prob_" + std::to_string(net.label_remap.external_ids()[k]) + ".vol"));
    }
  }
  out << "segmented " << c.id << " " << r.labels.shape.str() << " -> " << (dir / kLabelFile).string() << "\n";
  return kExitOk;
}

int run_infer(const InferArgs& a, std::ostream& out) {
  const std::string dtype = checkpoint_dtype(a.model);
  return dtype == "f64" ? infer_with<double>(a, out) : infer_with<float>(a, out);
}

int run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto truth_ids = list_labeled_cases(a.truth);
  const auto pred_ids = list_labeled_cases(a.pred);
  for (const auto& id : truth_ids) {
    if (!std::binary_search(pred_ids.begin(), pred_ids.end(), id)) {
      throw Error(ErrorCode::MissingCounterpart, "case " + id + " has no prediction in " + a.pred);
    }
  }
  for (const auto& id : pred_ids) {
    if (!std::binary_search(truth_ids.begin(), truth_ids.end(), id)) {
      throw Error(ErrorCode::MissingCounterpart, "prediction " + id + " has no ground truth in " + a.truth);
    }
  }
  if (truth_ids.empty()) throw Error(ErrorCode::MissingFile, "no labeled cases under " + a.truth);

  const LabelRemap remap;
  std::vector<MetricsReport> reports;
  for (const auto& id : truth_ids) {
    const LabelMap truth = load_label_map(fs::path(a.truth) / id / kLabelFile);
    const LabelMap pred = load_label_map(fs::path(a.pred) / id / kLabelFile);
    reports.push_back(evaluate_case(remap.to_internal(pred), remap.to_internal(truth), truth.spacing, id));
  }
  const auto summary = aggregate_reports(reports);

  std::ofstream f(a.out);
  if (!f) throw Error(ErrorCode::IoFailure, "cannot write " + a.out);
  for (const auto& r : reports) f << r.to_json().dump() << "\n";
  f << nlohmann::ordered_json{{"aggregate", summary}}.dump() << "\n";
  if (!f) throw Error(ErrorCode::IoFailure, "write failed for " + a.out);

  for (const char* metric : {"Dice", "Hausdorff95"}) {
    out << metric;
    for (Region r : kRegions) {
      const auto& cell = summary[std::string(metric) + " " + region_name(r)];
      char buf[64];
      if (cell["mean"].is_null()) {
        std::snprintf(buf, sizeof buf, "  %s n/a", region_name(r));
      } else {
        std::snprintf(buf, sizeof buf, "  %s %.4f", region_name(r), cell["mean"].get<double>());
      }
      out << buf;
    }
    out << "\n";
  }
  out << reports.size() << " cases evaluated, report written to " << a.out << "\n";
  return kExitOk;
}

int run_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradCheckOptions opt;
  opt.seed = a.seed;
  opt.seeds = a.seeds;
  opt.corrupt_op = a.corrupt;
  const auto results = a.precision == "float" ? run_gradcheck_suite<float>(opt) : run_gradcheck_suite<double>(opt);
  bool ok = true;
  char line[160];
  std::snprintf(line, sizeof line, "%-18s %14s %10s  %s\n", "op", "max_rel_error", "tolerance", "status");
  out << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-18s %14.3e %10.1e  %s\n", r.op.c_str(), r.max_rel_error, r.tolerance,
                  r.passed ? "pass" : "FAIL");
    out << line;
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitFailedCheck;
}

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidConfig: return kExitUsage;
    case ErrorCode::DivergedLoss: return kExitFailedCheck;
    default: return kExitRuntime;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multiscale 3D brain tumor segmentation"};
  app.name("msseg");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic phantom cases");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--cases", synth.cases, "Number of cases")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth.size, "Volume size D,H,W (each >= 16)")
      ->delimiter(',')
      ->expected(3)
      ->check(CLI::Range(16, 1024));
  synth_cmd->add_option("--seed", synth.seed, "Random seed");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a network on a case directory");
  train_cmd->add_option("--config", train_args.config, "JSON config file")->required();
  train_cmd->add_option("--data", train_args.data, "Directory of cases")->required();
  train_cmd->add_option("--out", train_args.out, "Output directory for checkpoints and logs")->required();
  train_cmd->add_option("--seed", train_args.seed, "Override train.seed");
  train_cmd->add_option("--iterations", train_args.iterations, "Override train.iterations");
  train_cmd->add_option("--precision", train_args.precision, "Override precision (float or double)");
  train_cmd->add_option("--producers", train_args.producers, "Override train.producers");
  train_cmd->add_flag("--paper-exact-dice", train_args.paper_exact_dice, "Keep the 1/n factor in the Dice term");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Segment one case with a trained checkpoint");
  infer_cmd->add_option("--model", infer.model, "Checkpoint file")->required();
  infer_cmd->add_option("--case", infer.case_dir, "Case directory")->required();
  infer_cmd->add_option("--out", infer.out, "Output directory")->required();
  infer_cmd->add_option("--threads", infer.threads, "Tile worker threads")->check(CLI::PositiveNumber);
  infer_cmd->add_flag("--probabilities", infer.probabilities, "Also write per-class probability volumes");

  EvaluateArgs evaluate;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against ground truth");
  eval_cmd->add_option("--pred", evaluate.pred, "Prediction directory")->required();
  eval_cmd->add_option("--truth", evaluate.truth, "Ground-truth directory")->required();
  eval_cmd->add_option("--out", evaluate.out, "Report file (JSON lines)")->required();

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc_cmd->add_option("--seed", gc.seed, "Random seed");
  gc_cmd->add_option("--precision", gc.precision, "float or double")->check(CLI::IsMember({"float", "double"}));
  gc_cmd->add_option("--seeds", gc.seeds, "Seeds per op")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--corrupt", gc.corrupt, "Perturb the backward of this op (self-test)")
      ->check(CLI::IsMember(gradcheck_ops()));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (app.get_subcommands().empty()) err << app.help();
    return kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth, out);
    if (train_cmd->parsed()) return run_train(train_args, out);
    if (infer_cmd->parsed()) return run_infer(infer, out);
    if (eval_cmd->parsed()) return run_evaluate(evaluate, out);
    if (gc_cmd->parsed()) return run_gradcheck(gc, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace msseg
