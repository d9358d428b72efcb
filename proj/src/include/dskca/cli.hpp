#pragma once

// Command line front end. run_command returns 0 on success, 1 on usage or
// argument errors, 2 on runtime failures (unreadable files, divergence,
// corrupt models), mirroring what a main() should pass to exit().

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dskca/diagnostics.hpp"
#include "dskca/io.hpp"
#include "dskca/solvers.hpp"

namespace dskca {

namespace detail {

struct FitArgs {
  std::string task;
  std::string data_path;
  std::string data_y_path;
  std::string format = "csv";
  bool csv_header = false;
  std::string kernel = "gaussian";
  std::string bandwidth = "1.0";
  std::string kernel_y;
  std::string bandwidth_y;
  TrainConfig cfg;
  std::string out_path;
  std::string trace_path;
  std::string probe_data_path;
  std::string probe_ref_path;
  std::string revisit = "cycle";
  std::string sampling = "shuffle";
};

struct EvalArgs {
  std::string model_path;
  std::string data_path;
  std::string format = "csv";
  bool csv_header = false;
  std::string out_path;
  std::string view = "left";
};

inline double resolve_bandwidth(const std::string& text, const Matrix& data,
                                std::uint64_t seed) {
  if (text == "median") return median_bandwidth(data, 1000, seed);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("bandwidth must be a number or 'median': " + text);
  }
  if (used != text.size()) {
    throw std::invalid_argument("bandwidth must be a number or 'median': " + text);
  }
  return v;
}

inline const CoefficientModel& pick_view(const LoadedModel& lm,
                                         const std::string& view) {
  if (view == "left") return lm.left;
  if (view == "right") {
    if (!lm.paired()) {
      throw std::invalid_argument("--view right: model has a single view");
    }
    return *lm.right;
  }
  throw std::invalid_argument("view must be left or right: " + view);
}

inline int cmd_fit(const FitArgs& a) {
  const DataFormat fmt = format_from_name(a.format);
  Matrix X = load_matrix(a.data_path, fmt, a.csv_header);
  const Task task = task_from_name(a.task);
  const bool paired = task == Task::ksvd || task == Task::kcca;
  std::optional<Matrix> Y;
  if (paired) {
    if (a.data_y_path.empty()) {
      throw std::invalid_argument(a.task + " requires --data-y");
    }
    Y = load_matrix(a.data_y_path, fmt, a.csv_header);
  } else if (!a.data_y_path.empty()) {
    throw std::invalid_argument(a.task + " does not accept --data-y");
  }

  const KernelFamily fam = family_from_name(a.kernel);
  const KernelSpec spec_x = make_kernel(
      fam, fam == KernelFamily::linear
               ? 1.0
               : resolve_bandwidth(a.bandwidth, X, a.cfg.seed),
      static_cast<int>(X.cols()));
  std::optional<KernelSpec> spec_y;
  if (paired) {
    const std::string fam_y_name = a.kernel_y.empty() ? a.kernel : a.kernel_y;
    const KernelFamily fam_y = family_from_name(fam_y_name);
    const std::string bw_y = a.bandwidth_y.empty() ? a.bandwidth : a.bandwidth_y;
    spec_y = make_kernel(fam_y,
                         fam_y == KernelFamily::linear
                             ? 1.0
                             : resolve_bandwidth(bw_y, *Y, a.cfg.seed + 1),
                         static_cast<int>(Y->cols()));
  }

  std::optional<TraceProbe> probe;
  if (!a.probe_data_path.empty() || !a.probe_ref_path.empty()) {
    if (a.probe_data_path.empty() || a.probe_ref_path.empty()) {
      throw std::invalid_argument("--probe-data and --probe-ref go together");
    }
    probe.emplace();
    probe->points = load_matrix(a.probe_data_path, fmt, a.csv_header);
    probe->reference = load_matrix(a.probe_ref_path, fmt, a.csv_header);
  }

  TrainConfig cfg = a.cfg;
  cfg.revisit = [&] {
    if (a.revisit == "cycle") return RevisitPolicy::cycle;
    if (a.revisit == "none") return RevisitPolicy::none;
    throw std::invalid_argument("revisit must be cycle or none: " + a.revisit);
  }();
  cfg.sampling = [&] {
    if (a.sampling == "shuffle") return SamplingPolicy::epoch_shuffle;
    if (a.sampling == "replacement") return SamplingPolicy::with_replacement;
    throw std::invalid_argument("sampling must be shuffle or replacement: " + a.sampling);
  }();

  const FitResult res = fit(task, X, Y, spec_x, spec_y, cfg, probe);
  if (!a.out_path.empty()) save_fit_result(a.out_path, res);
  if (!a.trace_path.empty()) write_trace_csv(a.trace_path, res.trace);

  std::printf("fit %s: iterations=%llu features=%llu blocks=%zu\n", a.task.c_str(),
              static_cast<unsigned long long>(res.t),
              static_cast<unsigned long long>(
                  (res.model.blocks.size() - 1) *
                  static_cast<std::size_t>(res.model.blocks.front().alpha.rows())),
              res.model.blocks.size());
  if (!res.trace.potential.empty()) {
    std::printf("final potential=%.6g\n", res.trace.potential.back());
  }
  return 0;
}

inline int cmd_eval(const EvalArgs& a, bool with_coordinates) {
  const LoadedModel lm = load_model(a.model_path);
  const Matrix X = load_matrix(a.data_path, format_from_name(a.format), a.csv_header);
  const CoefficientModel& m = pick_view(lm, a.view);
  const Matrix H = evaluate(m, X);
  if (a.out_path.empty()) throw std::invalid_argument("--out is required");
  if (!with_coordinates) {
    write_matrix_csv(a.out_path, H);
  } else {
    std::ofstream os(a.out_path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open file for writing: " + a.out_path);
    for (Index c = 0; c < X.cols(); ++c) os << "x" << (c + 1) << ',';
    for (Index c = 0; c < H.cols(); ++c) os << "h" << (c + 1) << (c + 1 < H.cols() ? "," : "");
    os << '\n';
    char buf[64];
    for (Index r = 0; r < X.rows(); ++r) {
      for (Index c = 0; c < X.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", X(r, c));
        os << buf << ',';
      }
      for (Index c = 0; c < H.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", H(r, c));
        os << buf << (c + 1 < H.cols() ? "," : "");
      }
      os << '\n';
    }
    if (!os.good()) throw std::runtime_error("failed writing file: " + a.out_path);
  }
  std::printf("%s: rows=%lld components=%lld out=%s\n",
              with_coordinates ? "project" : "eval",
              static_cast<long long>(H.rows()), static_cast<long long>(H.cols()),
              a.out_path.c_str());
  return 0;
}

inline int cmd_diagnose_rate(const std::string& trace_path, double window) {
  const DiagnosticsTrace trace = read_trace_csv(trace_path);
  const double slope = rate_fit(trace, window);
  std::printf("slope=%.9g\n", slope);
  return 0;
}

inline int cmd_diagnose_angle(const EvalArgs& a, const std::string& ref_path) {
  const LoadedModel lm = load_model(a.model_path);
  const DataFormat fmt = format_from_name(a.format);
  const Matrix X = load_matrix(a.data_path, fmt, a.csv_header);
  const Matrix ref = load_matrix(ref_path, fmt, a.csv_header);
  const Matrix H = evaluate(pick_view(lm, a.view), X);
  std::printf("sin2=%.9g\n", sin2_subspace_empirical(ref, H));
  return 0;
}

}  // namespace detail

inline int run_command(const std::vector<std::string>& args) {
  CLI::App app{"streaming kernel component analysis"};
  app.name("dskca");
  app.require_subcommand(1);

  detail::FitArgs fa;
  CLI::App* fit_cmd = app.add_subcommand("fit", "train a model from data");
  fit_cmd->add_option("task", fa.task, "one of kpca, gha, ksvd, kcca")
      ->required()
      ->check(CLI::IsMember({"kpca", "gha", "ksvd", "kcca"}));
  fit_cmd->add_option("--data", fa.data_path, "training data")->required();
  fit_cmd->add_option("--data-y", fa.data_y_path, "second view (ksvd, kcca)");
  fit_cmd->add_option("--format", fa.format, "csv or f64le");
  fit_cmd->add_flag("--csv-header", fa.csv_header, "skip the first csv row");
  fit_cmd->add_option("--kernel", fa.kernel, "gaussian, laplacian, cauchy, linear");
  fit_cmd->add_option("--bandwidth", fa.bandwidth, "positive number or 'median'");
  fit_cmd->add_option("--kernel-y", fa.kernel_y, "kernel for the second view");
  fit_cmd->add_option("--bandwidth-y", fa.bandwidth_y, "bandwidth for the second view");
  fit_cmd->add_option("--k", fa.cfg.k, "number of components");
  fit_cmd->add_option("--iters", fa.cfg.iterations, "iteration count");
  fit_cmd->add_option("--data-batch", fa.cfg.data_batch, "rows per step");
  fit_cmd->add_option("--feature-batch", fa.cfg.feature_batch, "features per block");
  fit_cmd->add_option("--total-features", fa.cfg.total_features, "feature budget");
  fit_cmd->add_option("--theta0", fa.cfg.schedule.theta0, "step size numerator");
  fit_cmd->add_option("--theta1", fa.cfg.schedule.theta1, "step size decay");
  fit_cmd->add_option("--seed", fa.cfg.seed, "master seed");
  fit_cmd->add_option("--revisit", fa.revisit, "cycle or none");
  fit_cmd->add_option("--sampling", fa.sampling, "shuffle or replacement");
  fit_cmd->add_option("--ridge", fa.cfg.ridge, "kcca regularizer");
  fit_cmd->add_option("--trace-stride", fa.cfg.trace_stride, "iterations between trace rows");
  fit_cmd->add_flag("--store-frequencies", fa.cfg.store_frequencies,
                    "cache sampled features in memory");
  fit_cmd->add_option("--out", fa.out_path, "model file to write");
  fit_cmd->add_option("--trace", fa.trace_path, "trace csv to write");
  fit_cmd->add_option("--probe-data", fa.probe_data_path, "probe points for the trace");
  fit_cmd->add_option("--probe-ref", fa.probe_ref_path, "reference scores at the probe points");

  detail::EvalArgs ea;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a model on data");
  eval_cmd->add_option("--model", ea.model_path, "model file")->required();
  eval_cmd->add_option("--data", ea.data_path, "points to evaluate")->required();
  eval_cmd->add_option("--format", ea.format, "csv or f64le");
  eval_cmd->add_flag("--csv-header", ea.csv_header, "skip the first csv row");
  eval_cmd->add_option("--out", ea.out_path, "csv of component scores")->required();
  eval_cmd->add_option("--view", ea.view, "left or right (paired models)");

  detail::EvalArgs pa;
  CLI::App* project_cmd = app.add_subcommand("project", "write coordinates plus scores");
  project_cmd->add_option("--model", pa.model_path, "model file")->required();
  project_cmd->add_option("--data", pa.data_path, "points to evaluate")->required();
  project_cmd->add_option("--format", pa.format, "csv or f64le");
  project_cmd->add_flag("--csv-header", pa.csv_header, "skip the first csv row");
  project_cmd->add_option("--out", pa.out_path, "csv with header row")->required();
  project_cmd->add_option("--view", pa.view, "left or right (paired models)");

  CLI::App* diag_cmd = app.add_subcommand("diagnose", "convergence diagnostics");
  diag_cmd->require_subcommand(1);
  std::string rate_trace;
  double rate_window = 0.5;
  CLI::App* rate_cmd = diag_cmd->add_subcommand("rate", "fit a decay exponent to a trace");
  rate_cmd->add_option("--trace", rate_trace, "trace csv from fit")->required();
  rate_cmd->add_option("--window", rate_window, "tail fraction to fit");

  detail::EvalArgs aa;
  std::string angle_ref;
  CLI::App* angle_cmd = diag_cmd->add_subcommand("angle", "subspace angle against a reference");
  angle_cmd->add_option("--model", aa.model_path, "model file")->required();
  angle_cmd->add_option("--data", aa.data_path, "probe points")->required();
  angle_cmd->add_option("--format", aa.format, "csv or f64le");
  angle_cmd->add_flag("--csv-header", aa.csv_header, "skip the first csv row");
  angle_cmd->add_option("--ref", angle_ref, "reference scores at the probe points")->required();
  angle_cmd->add_option("--view", aa.view, "left or right (paired models)");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("dskca");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (fit_cmd->parsed()) return detail::cmd_fit(fa);
    if (eval_cmd->parsed()) return detail::cmd_eval(ea, false);
    if (project_cmd->parsed()) return detail::cmd_eval(pa, true);
    if (rate_cmd->parsed()) return detail::cmd_diagnose_rate(rate_trace, rate_window);
    if (angle_cmd->parsed()) return detail::cmd_diagnose_angle(aa, angle_ref);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  std::cerr << "error: no command selected\n";
  return 1;
}

}  // namespace dskca
