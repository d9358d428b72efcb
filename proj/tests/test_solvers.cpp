#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "dskca/io.hpp"
#include "dskca/solvers.hpp"
#include "test_support.hpp"

using namespace dskca;

namespace {

// A model whose single cached feature evaluates to `value` at x = 0 for any
// frequency: the phase is chosen so scale*sqrt(2)*cos(b) = value.
FeatureBlock constant_feature(std::uint64_t index, double value) {
  FeatureBlock blk;
  blk.block_index = index;
  blk.count = 1;
  blk.frequencies = Matrix::Zero(1, 1);
  blk.phases = Vector::Constant(1, std::acos(value / std::numbers::sqrt2));
  blk.family = KernelFamily::gaussian;
  blk.scale = 1.0;
  return blk;
}

CoefficientModel handmade_model(int k, const Matrix& alpha0, double feature_value) {
  CoefficientModel m;
  m.k = k;
  m.spec = make_kernel(KernelFamily::gaussian, 1.0, 1);
  m.run_seed = 0;
  m.store_frequencies = true;
  ModelBlock blk;
  blk.block_index = 0;
  blk.alpha = alpha0;
  blk.cached = constant_feature(0, feature_value);
  m.blocks.push_back(std::move(blk));
  return m;
}

}  // namespace

TEST_CASE("step_size schedule") {
  CHECK(step_size({1.0, 0.0}, 1) == 1.0);
  CHECK(step_size({1.0, 0.0}, 12345) == 1.0);
  CHECK(step_size({1.0, 0.01}, 100) == 0.5);
  CHECK_THROWS_AS(step_size({15.0, 0.001}, 0), std::invalid_argument);
  CHECK_THROWS_AS(step_size({0.0, 0.001}, 1), std::invalid_argument);
}

TEST_CASE("kpca_step hand trace") {
  CoefficientModel m = handmade_model(1, Matrix::Constant(1, 1, 0.5), 1.0);
  Matrix X(1, 1);
  X << 0.0;
  // h = 1.0 * 0.5; contraction 1 - 0.1*h^2; new coefficient 0.1*0.8*h.
  const double h_norm = kpca_step(m, X, constant_feature(1, 0.8), 0.1);
  REQUIRE(m.blocks.size() == 2);
  CHECK(m.blocks[0].alpha(0, 0) == Catch::Approx(0.4875).margin(1e-12));
  CHECK(m.blocks[1].alpha(0, 0) == Catch::Approx(0.04).margin(1e-12));
  CHECK(h_norm == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("kpca_step with zero step leaves the function unchanged") {
  CoefficientModel m = handmade_model(1, Matrix::Constant(1, 1, 0.5), 1.0);
  Matrix X(1, 1);
  X << 0.0;

  CoefficientModel revisit = m;
  kpca_step(revisit, X, constant_feature(0, 1.0), 0.0, true);
  CHECK(tsup::bit_equal(revisit.blocks[0].alpha, m.blocks[0].alpha));

  CoefficientModel appended = m;
  kpca_step(appended, X, constant_feature(1, 0.8), 0.0);
  CHECK(appended.blocks[1].alpha.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linear-kernel kpca_step is the dense Oja iteration") {
  const KernelSpec lin = make_kernel(KernelFamily::linear, 1.0, 6);
  for (int inst = 0; inst < 100; ++inst) {
    const auto tag = static_cast<std::uint64_t>(inst);
    const Index bx = 1 + inst % 4;
    const Matrix G0 = tsup::randn(200 + tag, 1, 6, 2) * 0.4;
    const Matrix X = tsup::randn(200 + tag, 2, bx, 6);
    const double eta = 0.05;

    CoefficientModel m;
    m.k = 2;
    m.spec = lin;
    ModelBlock blk;
    blk.block_index = 0;
    blk.alpha = G0;
    m.blocks.push_back(blk);
    kpca_step(m, X, identity_block(lin), eta, true);

    const Matrix H = X * G0;
    const Matrix ref = G0 * (Matrix::Identity(2, 2) -
                             eta * (H.transpose() * H) / static_cast<double>(bx)) +
                       eta * (X.transpose() * H) / static_cast<double>(bx);
    CHECK((m.blocks[0].alpha - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gha_step at k=1 is exactly kpca_step") {
  CoefficientModel a = handmade_model(1, Matrix::Constant(1, 1, 0.7), 1.0);
  CoefficientModel b = a;
  Matrix X(1, 1);
  X << 0.0;
  kpca_step(a, X, constant_feature(1, 0.8), 0.2);
  gha_step(b, X, constant_feature(1, 0.8), 0.2);
  REQUIRE(a.blocks.size() == b.blocks.size());
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    CHECK(tsup::bit_equal(a.blocks[i].alpha, b.blocks[i].alpha));
  }
}

TEST_CASE("gha_step hand trace at k=2") {
  Matrix alpha0(1, 2);
  alpha0 << 1.0, 2.0;
  CoefficientModel m = handmade_model(2, alpha0, 1.0);
  Matrix X(1, 1);
  X << 0.0;
  // H = [1, 2]; triangular contraction [[1,2],[0,4]];
  // M = [[0.9,-0.2],[0,0.6]]; alpha0 -> [0.9, 1.0]; new -> 0.1*0.8*[1,2].
  gha_step(m, X, constant_feature(1, 0.8), 0.1);
  CHECK(m.blocks[0].alpha(0, 0) == Catch::Approx(0.9).margin(1e-12));
  CHECK(m.blocks[0].alpha(0, 1) == Catch::Approx(1.0).margin(1e-12));
  CHECK(m.blocks[1].alpha(0, 0) == Catch::Approx(0.08).margin(1e-12));
  CHECK(m.blocks[1].alpha(0, 1) == Catch::Approx(0.16).margin(1e-12));
}

TEST_CASE("gha column 1 tracks a k=1 kpca run bit-exactly through fit") {
  const KernelSpec g = make_kernel(KernelFamily::gaussian, 1.2, 2);
  const Matrix X = tsup::randn(210, 3, 64, 2);
  TrainConfig cfg;
  cfg.iterations = 50;
  cfg.data_batch = 4;
  cfg.feature_batch = 8;
  cfg.total_features = 128;
  cfg.schedule = {0.5, 0.05};
  cfg.seed = 31;

  TrainConfig cfg1 = cfg;
  cfg1.k = 1;
  const FitResult one = fit(Task::kpca, X, g, cfg1);
  TrainConfig cfg3 = cfg;
  cfg3.k = 3;
  const FitResult three = fit(Task::gha, X, g, cfg3);

  REQUIRE(one.model.blocks.size() == three.model.blocks.size());
  for (std::size_t b = 0; b < one.model.blocks.size(); ++b) {
    CHECK(tsup::bit_equal(one.model.blocks[b].alpha,
                          Matrix(three.model.blocks[b].alpha.col(0))));
  }
}

TEST_CASE("ksvd_step is symmetric under view swap and inert at zero step") {
  const KernelSpec lin = make_kernel(KernelFamily::linear, 1.0, 3);
  const Matrix X = tsup::randn(220, 4, 5, 3);
  const Matrix Y = tsup::randn(220, 5, 5, 3);
  PairedModel pm;
  pm.left.k = pm.right.k = 2;
  pm.left.spec = pm.right.spec = lin;
  ModelBlock bl;
  bl.block_index = 0;
  bl.alpha = tsup::randn(221, 6, 3, 2);
  pm.left.blocks.push_back(bl);
  ModelBlock br;
  br.block_index = 0;
  br.alpha = tsup::randn(221, 7, 3, 2);
  pm.right.blocks.push_back(br);

  PairedModel zero = pm;
  ksvd_step(zero, X, Y, identity_block(lin), identity_block(lin), 0.0, true, true);
  CHECK(tsup::bit_equal(zero.left.blocks[0].alpha, pm.left.blocks[0].alpha));
  CHECK(tsup::bit_equal(zero.right.blocks[0].alpha, pm.right.blocks[0].alpha));

  PairedModel fwd = pm;
  ksvd_step(fwd, X, Y, identity_block(lin), identity_block(lin), 0.1, true, true);
  PairedModel swapped{pm.right, pm.left};
  ksvd_step(swapped, Y, X, identity_block(lin), identity_block(lin), 0.1, true, true);
  CHECK(tsup::bit_equal(fwd.left.blocks[0].alpha, swapped.right.blocks[0].alpha));
  CHECK(tsup::bit_equal(fwd.right.blocks[0].alpha, swapped.left.blocks[0].alpha));
}

TEST_CASE("ksvd fit recovers singular subspaces of a fixed matrix") {
  // Stream the columns of a fixed 20x15 matrix as paired samples so each
  // full batch reproduces the matrix exactly as the cross-covariance.
  const Index r = 20, c = 15;
  Matrix U0 = tsup::randn(230, 8, r, r);
  Matrix V0 = tsup::randn(230, 9, c, c);
  U0 = Eigen::HouseholderQR<Matrix>(U0).householderQ() * Matrix::Identity(r, c);
  V0 = Eigen::HouseholderQR<Matrix>(V0).householderQ() * Matrix::Identity(c, c);
  Vector sv(c);
  sv << 3.0, 2.0, 1.0, 0.8, 0.65, 0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.1, 0.08,
      0.05, 0.02;
  const Matrix M = U0 * sv.asDiagonal() * V0.transpose();

  Matrix X(c, r), Y(c, c);
  const double root = std::sqrt(static_cast<double>(c));
  for (Index j = 0; j < c; ++j) {
    X.row(j) = root * M.col(j).transpose();
    Y.row(j) = root * Matrix::Identity(c, c).col(j).transpose();
  }

  TrainConfig cfg;
  cfg.k = 2;
  cfg.iterations = 800;
  cfg.data_batch = c;  // full batch: the step sees M itself
  cfg.schedule = {0.5, 0.02};
  cfg.seed = 77;
  const FitResult res = fit_paired(Task::ksvd, X, Y,
                                   make_kernel(KernelFamily::linear, 1.0, r),
                                   make_kernel(KernelFamily::linear, 1.0, c), cfg);

  const SvdTopK svd = dense_svd_topk(M, 2);
  const double left = sin2_subspace_empirical(svd.U, res.model.blocks[0].alpha);
  const double right = sin2_subspace_empirical(svd.V, res.right->blocks[0].alpha);
  CHECK(left <= 0.05);
  CHECK(right <= 0.05);
}

TEST_CASE("kcca_step is inert at zero step and respects ridge sign") {
  const KernelSpec lin = make_kernel(KernelFamily::linear, 1.0, 3);
  const Matrix X = tsup::randn(240, 1, 6, 3);
  const Matrix Y = tsup::randn(240, 2, 6, 3);
  PairedModel pm;
  pm.left.k = pm.right.k = 1;
  pm.left.spec = pm.right.spec = lin;
  ModelBlock bl;
  bl.block_index = 0;
  bl.alpha = tsup::randn(241, 3, 3, 1);
  pm.left.blocks.push_back(bl);
  ModelBlock br;
  br.block_index = 0;
  br.alpha = tsup::randn(241, 4, 3, 1);
  pm.right.blocks.push_back(br);

  PairedModel zero = pm;
  kcca_step(zero, X, Y, identity_block(lin), identity_block(lin), 0.0, true, true);
  CHECK(tsup::bit_equal(zero.left.blocks[0].alpha, pm.left.blocks[0].alpha));
  CHECK(tsup::bit_equal(zero.right.blocks[0].alpha, pm.right.blocks[0].alpha));

  CHECK_THROWS_AS(kcca_step(zero, X, Y, identity_block(lin), identity_block(lin),
                            0.1, true, true, -1.0),
                  std::invalid_argument);
}

TEST_CASE("kcca fit on identical views reaches correlation one") {
  const Matrix X = tsup::randn(250, 5, 2000, 3);
  TrainConfig cfg;
  cfg.k = 1;
  cfg.iterations = 2000;
  cfg.data_batch = 32;
  cfg.schedule = {0.1, 0.01};
  cfg.seed = 19;
  cfg.ridge = 0.1;
  const KernelSpec lin = make_kernel(KernelFamily::linear, 1.0, 3);
  const FitResult res = fit_paired(Task::kcca, X, X, lin, lin, cfg);

  const Vector u = evaluate(res.model, X).col(0);
  const Vector v = evaluate(*res.right, X).col(0);
  const double corr =
      (u.array() - u.mean()).cwiseProduct(v.array() - v.mean()).sum() /
      std::sqrt((u.array() - u.mean()).square().sum() *
                (v.array() - v.mean()).square().sum());
  CHECK(corr >= 0.98);
}

TEST_CASE("fit with zero iterations returns the initial model") {
  const KernelSpec g = make_kernel(KernelFamily::gaussian, 1.0, 2);
  const Matrix X = tsup::randn(260, 6, 30, 2);
  TrainConfig cfg;
  cfg.k = 2;
  cfg.iterations = 0;
  cfg.feature_batch = 8;
  cfg.total_features = 64;
  cfg.seed = 23;
  const FitResult res = fit(Task::kpca, X, g, cfg);
  const CoefficientModel fresh = init_model(g, 2, 8, 23);
  REQUIRE(res.model.blocks.size() == 1);
  CHECK(tsup::bit_equal(res.model.blocks[0].alpha, fresh.blocks[0].alpha));
  CHECK(res.t == 0);
  CHECK(res.trace.iterations.empty());
}

TEST_CASE("fit is deterministic and honors the feature budget") {
  const KernelSpec g = make_kernel(KernelFamily::gaussian, 1.0, 2);
  const Matrix X = tsup::randn(261, 7, 50, 2);
  TrainConfig cfg;
  cfg.k = 2;
  cfg.iterations = 10;
  cfg.data_batch = 4;
  cfg.feature_batch = 64;
  cfg.total_features = 256;  // four fresh blocks, then cyclic revisits
  cfg.schedule = {0.3, 0.1};
  cfg.seed = 29;

  const FitResult a = fit(Task::kpca, X, g, cfg);
  const FitResult b = fit(Task::kpca, X, g, cfg);
  CHECK(serialize_model(a.model, "kpca") == serialize_model(b.model, "kpca"));

  REQUIRE(a.model.blocks.size() == 5);  // init block + budget/feature_batch
  for (std::size_t i = 0; i < a.model.blocks.size(); ++i) {
    CHECK(a.model.blocks[i].block_index == i);
  }

  TrainConfig strict = cfg;
  strict.revisit = RevisitPolicy::none;
  CHECK_THROWS_AS(fit(Task::kpca, X, g, strict), std::invalid_argument);
  strict.iterations = 4;
  CHECK_NOTHROW(fit(Task::kpca, X, g, strict));

  TrainConfig replacement = cfg;
  replacement.sampling = SamplingPolicy::with_replacement;
  CHECK_NOTHROW(fit(Task::kpca, X, g, replacement));

  TrainConfig ragged = cfg;
  ragged.total_features = 100;  // not a multiple of feature_batch
  CHECK_THROWS_AS(fit(Task::kpca, X, g, ragged), std::invalid_argument);
}

TEST_CASE("fit rejects inconsistent inputs") {
  const KernelSpec g = make_kernel(KernelFamily::gaussian, 1.0, 2);
  const Matrix X = tsup::randn(262, 8, 20, 2);
  TrainConfig cfg;
  cfg.k = 1;
  cfg.iterations = 1;
  cfg.feature_batch = 4;
  cfg.total_features = 8;

  CHECK_THROWS_AS(fit(Task::ksvd, X, g, cfg), std::invalid_argument);
  CHECK_THROWS_AS(fit(Task::kpca, X, std::optional<Matrix>(X), g,
                      std::optional<KernelSpec>(g), cfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(fit_paired(Task::kcca, X, tsup::randn(263, 9, 19, 2), g, g, cfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(fit(Task::kpca, tsup::randn(264, 1, 20, 3), g, cfg),
                  std::invalid_argument);

  TraceProbe probe;
  probe.points = tsup::randn(265, 2, 10, 2);
  probe.reference = tsup::randn(265, 3, 10, 2);  // k=1 expected, 2 given
  CHECK_THROWS_AS(fit(Task::kpca, X, std::nullopt, g, std::nullopt, cfg,
                      std::optional<TraceProbe>(probe)),
                  std::invalid_argument);
}

TEST_CASE("divergence raises an error naming the iteration") {
  // Large steps on a linear model blow up superexponentially.
  const KernelSpec lin = make_kernel(KernelFamily::linear, 1.0, 3);
  const Matrix X = tsup::randn(266, 4, 200, 3) * 3.0;
  TrainConfig cfg;
  cfg.k = 2;
  cfg.iterations = 5000;
  cfg.data_batch = 8;
  cfg.schedule = {40.0, 0.0};
  cfg.seed = 3;
  try {
    fit(Task::kpca, X, lin, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() >= 1);
    CHECK(e.max_abs_h() > 1e100);
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("fit records the trace on the stride and the final step") {
  const KernelSpec lin = make_kernel(KernelFamily::linear, 1.0, 2);
  const Matrix X = tsup::randn(267, 5, 100, 2);
  const Matrix vecs =
      dense_topk_eig((X.transpose() * X) / static_cast<double>(X.rows()), 1).second;

  TrainConfig cfg;
  cfg.k = 1;
  cfg.iterations = 25;
  cfg.data_batch = 10;
  cfg.schedule = {0.2, 0.05};
  cfg.seed = 41;
  cfg.trace_stride = 10;

  TraceProbe probe;
  probe.points = X.topRows(40);
  probe.reference = probe.points * vecs;
  const FitResult res = fit(Task::kpca, X, std::nullopt, lin, std::nullopt, cfg,
                            std::optional<TraceProbe>(probe));

  REQUIRE(res.trace.iterations.size() == 3);
  CHECK(res.trace.iterations[0] == 10);
  CHECK(res.trace.iterations[1] == 20);
  CHECK(res.trace.iterations[2] == 25);
  REQUIRE(res.trace.potential.size() == 3);
  for (double p : res.trace.potential) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  CHECK(res.trace.h_norm_max.size() == 3);
  CHECK(res.trace.wall_clock.size() == 3);
  CHECK(res.trace.wall_clock[0] <= res.trace.wall_clock[2]);
}
