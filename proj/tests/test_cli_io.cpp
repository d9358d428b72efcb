#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "dskca/cli.hpp"
#include "test_support.hpp"

using namespace dskca;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << text;
}

std::string first_line(const std::string& path) {
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  return line;
}

FitResult small_gaussian_fit(std::uint64_t seed, bool store, Index n = 40) {
  const Matrix X = tsup::randn(seed, 1, n, 2);
  const KernelSpec spec = make_kernel(KernelFamily::gaussian, 1.0, 2);
  TrainConfig cfg;
  cfg.k = 2;
  cfg.iterations = 30;
  cfg.data_batch = 4;
  cfg.feature_batch = 8;
  cfg.total_features = 32;
  cfg.schedule = {0.2, 0.1};
  cfg.seed = seed;
  cfg.store_frequencies = store;
  return fit(Task::kpca, X, spec, cfg);
}

}  // namespace

TEST_CASE("make_dataset validates shapes and values") {
  const Matrix X = tsup::randn(601, 1, 4, 2);
  const Dataset d = make_dataset(X);
  CHECK(tsup::bit_equal(d.values, X));
  CHECK_FALSE(d.paired.has_value());

  const Dataset p = make_dataset(X, tsup::randn(601, 2, 4, 3));
  CHECK(p.paired.has_value());

  CHECK_THROWS_AS(make_dataset(Matrix(0, 2)), std::invalid_argument);
  Matrix bad = X;
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(make_dataset(bad), std::invalid_argument);
  CHECK_THROWS_AS(make_dataset(X, tsup::randn(601, 3, 5, 3)),
                  std::invalid_argument);
}

TEST_CASE("csv loader parses values and reports cell positions") {
  tsup::TempFile f("in.csv");
  write_text(f.path, "1,2\n3,4\n");
  const Matrix M = load_matrix_csv(f.path);
  REQUIRE(M.rows() == 2);
  REQUIRE(M.cols() == 2);
  CHECK(M(0, 0) == 1.0);
  CHECK(M(1, 1) == 4.0);

  write_text(f.path, " 1.5 ,\t-2e3\r\n0, 7 \r\n");
  const Matrix T = load_matrix_csv(f.path);
  CHECK(T(0, 0) == 1.5);
  CHECK(T(0, 1) == -2000.0);
  CHECK(T(1, 1) == 7.0);

  write_text(f.path, "a,b\n1,2\n");
  const Matrix H = load_matrix_csv(f.path, true);
  CHECK(H.rows() == 1);
  CHECK(H(0, 1) == 2.0);

  write_text(f.path, "abc,2\n");
  try {
    load_matrix_csv(f.path);
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 1, col 1") != std::string::npos);
  }

  write_text(f.path, "1,2\n3\n");
  try {
    load_matrix_csv(f.path);
    FAIL("expected ragged error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("ragged row 2") != std::string::npos);
  }

  write_text(f.path, "1,nan\n");
  try {
    load_matrix_csv(f.path);
    FAIL("expected non-finite error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }

  write_text(f.path, "");
  CHECK_THROWS_AS(load_matrix_csv(f.path), std::runtime_error);
  CHECK_THROWS_AS(load_matrix_csv("/nonexistent/x.csv"), std::runtime_error);
}

TEST_CASE("csv writer round-trips doubles exactly") {
  Matrix M(2, 3);
  M << 0.1, -1.0 / 3.0, 1e-300, 12345.678901234567, -0.0, 2.0;
  tsup::TempFile f("round.csv");
  write_matrix_csv(f.path, M);
  const Matrix back = load_matrix_csv(f.path);
  CHECK(tsup::bit_equal(back, M));
}

TEST_CASE("f64le format round-trips bitwise and rejects malformed files") {
  const Matrix M = tsup::randn(602, 1, 7, 3);
  tsup::TempFile f("m.f64le");
  write_matrix_f64le(f.path, M);
  const Matrix back = load_matrix_f64le(f.path);
  CHECK(tsup::bit_equal(back, M));
  CHECK(tsup::bit_equal(load_matrix(f.path, DataFormat::f64le, false), M));

  write_text(f.path, "short");
  CHECK_THROWS_AS(load_matrix_f64le(f.path), std::runtime_error);

  std::string bytes;
  detail::put_u64(bytes, 2);
  detail::put_u64(bytes, 2);
  bytes.append(8 * 3, '\0');  // 3 doubles where 4 are promised
  write_text(f.path, bytes);
  CHECK_THROWS_AS(load_matrix_f64le(f.path), std::runtime_error);
}

TEST_CASE("format names resolve") {
  CHECK(format_from_name("csv") == DataFormat::csv);
  CHECK(format_from_name("f64le") == DataFormat::f64le);
  CHECK_THROWS_AS(format_from_name("parquet"), std::invalid_argument);
}

TEST_CASE("model serialization is idempotent and preserves evaluation") {
  for (const bool store : {false, true}) {
    const FitResult res = small_gaussian_fit(603, store);
    const std::string bytes = serialize_model(res.model, task_name(res.task));
    const LoadedModel lm = deserialize_model(bytes);
    CHECK(lm.task == "kpca");
    CHECK_FALSE(lm.paired());
    CHECK(serialize_model(lm.left, lm.task) == bytes);

    const Matrix probe = tsup::randn(604, 1, 9, 2);
    CHECK(tsup::bit_equal(evaluate(lm.left, probe), evaluate(res.model, probe)));
  }
}

TEST_CASE("paired model serialization round-trips both views") {
  const Matrix X = tsup::randn(605, 1, 30, 2);
  const Matrix Y = tsup::randn(605, 2, 30, 3);
  const KernelSpec sx = make_kernel(KernelFamily::gaussian, 1.0, 2);
  const KernelSpec sy = make_kernel(KernelFamily::laplacian, 2.0, 3);
  TrainConfig cfg;
  cfg.k = 2;
  cfg.iterations = 12;
  cfg.data_batch = 5;
  cfg.feature_batch = 8;
  cfg.total_features = 32;
  cfg.schedule = {0.1, 0.1};
  cfg.seed = 605;
  const FitResult res = fit_paired(Task::ksvd, X, Y, sx, sy, cfg);
  REQUIRE(res.right.has_value());

  PairedModel pm{res.model, *res.right};
  const std::string bytes = serialize_model(pm, task_name(res.task));
  const LoadedModel lm = deserialize_model(bytes);
  REQUIRE(lm.paired());
  CHECK(lm.task == "ksvd");
  const PairedModel back{lm.left, *lm.right};
  CHECK(serialize_model(back, lm.task) == bytes);

  const Matrix px = tsup::randn(606, 1, 6, 2);
  const Matrix py = tsup::randn(606, 2, 6, 3);
  CHECK(tsup::bit_equal(evaluate(lm.left, px), evaluate(res.model, px)));
  CHECK(tsup::bit_equal(evaluate(*lm.right, py), evaluate(*res.right, py)));
}

TEST_CASE("corrupt model files are rejected") {
  const FitResult res = small_gaussian_fit(607, false);
  const std::string bytes = serialize_model(res.model, "kpca");

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(bad_magic), std::runtime_error);

  CHECK_THROWS_AS(deserialize_model(bytes.substr(0, 4)), std::runtime_error);
  CHECK_THROWS_AS(deserialize_model(bytes.substr(0, 20)), std::runtime_error);
  CHECK_THROWS_AS(deserialize_model(bytes.substr(0, bytes.size() - 5)),
                  std::runtime_error);
  CHECK_THROWS_AS(deserialize_model(bytes + "tail"), std::runtime_error);

  std::string bad_json = bytes;
  bad_json[14] = '!';  // inside the header text
  CHECK_THROWS_AS(deserialize_model(bad_json), std::runtime_error);
}

TEST_CASE("model size depends on the feature budget, not the sample count") {
  const auto bytes_for = [](Index n) {
    const FitResult res = small_gaussian_fit(608, false, n);
    return serialize_model(res.model, "kpca").size();
  };
  CHECK(bytes_for(100) == bytes_for(1000));
}

TEST_CASE("cli fit, eval, project, and diagnose round trip") {
  // Anisotropic linear data so the top eigenvector is well separated.
  Matrix X = tsup::randn(609, 1, 400, 3);
  X.col(0) *= 2.0;
  X.col(2) *= 0.5;
  const Matrix cov = X.transpose() * X / static_cast<double>(X.rows());
  const auto top = dense_topk_eig(cov, 1);
  const Matrix ref = X * top.second;

  tsup::TempFile data("cli_data.csv"), refp("cli_ref.csv"),
      model("cli_model.bin"), trace("cli_trace.csv"), out("cli_out.csv"),
      proj("cli_proj.csv");
  write_matrix_csv(data.path, X);
  write_matrix_csv(refp.path, ref);

  const int fit_rc = run_command(
      {"fit", "kpca", "--data", data.path, "--kernel", "linear", "--k", "1",
       "--iters", "400", "--data-batch", "8", "--theta0", "0.1", "--theta1",
       "0.01", "--seed", "11", "--trace-stride", "10", "--out", model.path,
       "--trace", trace.path, "--probe-data", data.path, "--probe-ref",
       refp.path});
  REQUIRE(fit_rc == 0);

  const LoadedModel lm = load_model(model.path);
  CHECK(lm.task == "kpca");

  REQUIRE(run_command({"eval", "--model", model.path, "--data", data.path,
                       "--out", out.path}) == 0);
  const Matrix H = load_matrix_csv(out.path);
  REQUIRE(H.cols() == 1);
  REQUIRE(H.rows() == X.rows());
  CHECK(tsup::bit_equal(H, evaluate(lm.left, X)));

  // The estimate should align with the dominant direction.
  CHECK(sin2_subspace_empirical(ref, H) < 0.1);

  REQUIRE(run_command({"project", "--model", model.path, "--data", data.path,
                       "--out", proj.path}) == 0);
  CHECK(first_line(proj.path) == "x1,x2,x3,h1");
  const Matrix P = load_matrix_csv(proj.path, true);
  REQUIRE(P.cols() == 4);
  CHECK(tsup::bit_equal(Matrix(P.leftCols(3)), X));
  CHECK(tsup::bit_equal(Matrix(P.rightCols(1)), H));

  CHECK(run_command({"diagnose", "rate", "--trace", trace.path}) == 0);
  CHECK(run_command({"diagnose", "angle", "--model", model.path, "--data",
                     data.path, "--ref", refp.path}) == 0);

  // Trace carries a potential column because a probe was supplied.
  const DiagnosticsTrace tr = read_trace_csv(trace.path);
  REQUIRE_FALSE(tr.potential.empty());
  CHECK(tr.iterations.back() == 400);
}

TEST_CASE("cli reports usage and runtime failures distinctly") {
  tsup::TempFile model("cli_err_model.bin"), data("cli_err_data.csv");
  write_matrix_csv(data.path, tsup::randn(610, 1, 8, 2));

  CHECK(run_command({"frobnicate"}) == 1);
  CHECK(run_command({"fit", "kpca", "--data", data.path, "--bogus-flag"}) == 1);
  CHECK(run_command({"eval", "--model", model.path}) == 1);  // missing --data/--out
  CHECK(run_command({"fit", "nosuchtask", "--data", data.path}) == 1);
  CHECK(run_command({"fit", "kpca", "--data", "/nonexistent/file.csv",
                     "--kernel", "linear", "--iters", "1", "--out",
                     model.path}) == 2);

  write_text(model.path, "not a model");
  CHECK(run_command({"eval", "--model", model.path, "--data", data.path,
                     "--out", "/tmp/dskca_test_unused.csv"}) == 2);

  // ksvd requires a second view.
  CHECK(run_command({"fit", "ksvd", "--data", data.path, "--kernel", "linear",
                     "--iters", "1", "--out", model.path}) == 1);
}

TEST_CASE("cli single-view models reject the right view") {
  tsup::TempFile data("cli_view_data.csv"), model("cli_view_model.bin"),
      out("cli_view_out.csv");
  write_matrix_csv(data.path, tsup::randn(611, 1, 20, 2));
  REQUIRE(run_command({"fit", "kpca", "--data", data.path, "--kernel",
                       "linear", "--iters", "5", "--data-batch", "4",
                       "--theta0", "0.05", "--out", model.path}) == 0);
  CHECK(run_command({"eval", "--model", model.path, "--data", data.path,
                     "--out", out.path, "--view", "right"}) == 1);
}

TEST_CASE("cli median bandwidth and f64le input work end to end") {
  tsup::TempFile data("cli_med_data.bin"), model("cli_med_model.bin"),
      out("cli_med_out.csv");
  const Matrix X = tsup::randn(612, 1, 60, 2);
  write_matrix_f64le(data.path, X);
  REQUIRE(run_command({"fit", "kpca", "--data", data.path, "--format", "f64le",
                       "--bandwidth", "median", "--k", "2", "--iters", "20",
                       "--data-batch", "4", "--feature-batch", "8",
                       "--total-features", "32", "--theta0", "0.1", "--seed",
                       "12", "--out", model.path}) == 0);
  const LoadedModel lm = load_model(model.path);
  const double med = median_bandwidth(X, 1000, 12);
  CHECK(lm.left.spec.bandwidth == med);
  CHECK(run_command({"eval", "--model", model.path, "--data", data.path,
                     "--format", "f64le", "--out", out.path}) == 0);
  CHECK(load_matrix_csv(out.path).cols() == 2);
}

TEST_CASE("cli fits are deterministic end to end") {
  tsup::TempFile data("cli_det_data.csv"), m1("cli_det_m1.bin"),
      m2("cli_det_m2.bin"), t1("cli_det_t1.csv"), t2("cli_det_t2.csv");
  write_matrix_csv(data.path, tsup::randn(613, 1, 50, 2));
  const std::vector<std::string> common = {
      "fit",           "kpca", "--data",       data.path, "--kernel",
      "gaussian",      "--k",  "2",            "--iters", "25",
      "--data-batch",  "5",    "--feature-batch", "8",    "--total-features",
      "64",            "--theta0", "0.1",      "--seed",  "99"};
  auto with_out = [&](const std::string& mp, const std::string& tp) {
    std::vector<std::string> v = common;
    v.insert(v.end(), {"--out", mp, "--trace", tp});
    return v;
  };
  REQUIRE(run_command(with_out(m1.path, t1.path)) == 0);
  REQUIRE(run_command(with_out(m2.path, t2.path)) == 0);
  CHECK(detail::read_file(m1.path) == detail::read_file(m2.path));

  // Traces match except the wall-clock column.
  const DiagnosticsTrace a = read_trace_csv(t1.path);
  const DiagnosticsTrace b = read_trace_csv(t2.path);
  REQUIRE(a.iterations == b.iterations);
  CHECK(a.h_norm_max == b.h_norm_max);
  CHECK(a.potential == b.potential);
}
