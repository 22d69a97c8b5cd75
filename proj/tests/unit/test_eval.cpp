#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "adlgnn/config.hpp"
#include "adlgnn/data.hpp"
#include "adlgnn/error.hpp"
#include "adlgnn/eval.hpp"
#include "adlgnn/model.hpp"
#include "adlgnn/synth.hpp"
#include "adlgnn/train.hpp"
#include "helpers.hpp"

using namespace adlgnn;
using eval::Matrix;

namespace {

// Straight loops over the flattened cells, written without Eigen reductions.
double brute_rse(const Matrix& Y, const Matrix& P) {
  const std::size_t n = static_cast<std::size_t>(Y.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += Y.data()[i];
  mean /= static_cast<double>(n);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (Y.data()[i] - P.data()[i]) * (Y.data()[i] - P.data()[i]);
    den += (Y.data()[i] - mean) * (Y.data()[i] - mean);
  }
  return std::sqrt(num) / std::sqrt(den);
}

double brute_corr(const Matrix& Y, const Matrix& P) {
  double total = 0.0;
  for (Eigen::Index s = 0; s < Y.cols(); ++s) {
    double my = 0.0, mp = 0.0;
    for (Eigen::Index t = 0; t < Y.rows(); ++t) {
      my += Y(t, s);
      mp += P(t, s);
    }
    my /= double(Y.rows());
    mp /= double(Y.rows());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (Eigen::Index t = 0; t < Y.rows(); ++t) {
      sxy += (Y(t, s) - my) * (P(t, s) - mp);
      sxx += (Y(t, s) - my) * (Y(t, s) - my);
      syy += (P(t, s) - mp) * (P(t, s) - mp);
    }
    if (sxx > 0.0 && syy > 0.0) total += sxy / std::sqrt(sxx * syy);
  }
  return total / double(Y.cols());
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("rse examples") {
    const Matrix Y = testing::random_matrix(50, 5, 1);
    CHECK(eval::rse(Y, Y) == 0.0);
    CHECK(eval::rse(Y, Matrix::Constant(50, 5, Y.mean())) == doctest::Approx(1.0).epsilon(1e-14));
    Matrix a(2, 2), b(2, 2);
    a << 1, 2, 3, 4;
    b << 1, 1, 4, 4;
    CHECK(eval::rse(a, b) == doctest::Approx(std::sqrt(2.0) / std::sqrt(5.0)).epsilon(1e-15));
    CHECK(eval::rse(a, b) == doctest::Approx(0.632455).epsilon(1e-6));
    CHECK_THROWS_AS(eval::rse(Matrix::Ones(3, 2), Matrix::Zero(3, 2)), Error);
    CHECK_THROWS_AS(eval::rse(a, Matrix::Zero(3, 2)), ShapeError);
  }

  TEST_CASE("corr examples") {
    const Matrix Y = testing::random_matrix(50, 5, 2);
    CHECK(eval::corr(Y, Y) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(eval::corr(Y, -Y) == doctest::Approx(-1.0).epsilon(1e-14));
    Matrix Y2 = testing::random_matrix(30, 2, 3), P = Y2;
    P.col(1).setConstant(0.7);
    CHECK(eval::corr(Y2, P) == doctest::Approx(0.5).epsilon(1e-14));
  }

  TEST_CASE("metrics match brute force on 20 seeded fixtures") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Matrix Y = testing::gaussian_matrix(50, 5, 100 + seed);
      const Matrix P = Y + 0.5 * testing::gaussian_matrix(50, 5, 200 + seed);
      CHECK(std::abs(eval::rse(Y, P) - brute_rse(Y, P)) < 1e-9);
      CHECK(std::abs(eval::corr(Y, P) - brute_corr(Y, P)) < 1e-9);
    }
  }

  TEST_CASE("metric invariances") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Matrix Y = testing::gaussian_matrix(40, 4, 300 + seed);
      const Matrix P = Y + testing::gaussian_matrix(40, 4, 400 + seed);
      const double k = 0.1 + seed;
      CHECK(eval::rse(k * Y, k * P) == doctest::Approx(eval::rse(Y, P)).epsilon(1e-12));
      const Eigen::RowVectorXd scale = testing::random_matrix(1, 4, seed, 0.5, 3.0);
      const Eigen::RowVectorXd shift = testing::random_matrix(1, 4, seed + 50, -5.0, 5.0);
      const Matrix Ya = (Y.array().rowwise() * scale.array()).rowwise() + shift.array();
      const Matrix Pa = (P.array().rowwise() * scale.array()).rowwise() + shift.array();
      CHECK(eval::corr(Ya, Pa) == doctest::Approx(eval::corr(Y, P)).epsilon(1e-12));
      CHECK(eval::rse(Y, P) >= 0.0);
      CHECK(std::abs(eval::corr(Y, P)) <= 1.0);
    }
  }

  TEST_CASE("reference table") {
    const auto r = eval::reference("ADLGNN", "solar", 3);
    REQUIRE(r.has_value());
    CHECK(r->rse == 0.1708);
    CHECK(r->corr == 0.9866);
    CHECK(eval::reference("SDLGNN-Corr", "traffic", 24)->rse == 0.4579);
    CHECK_FALSE(eval::reference("ADLGNN", "solar", 5).has_value());
    CHECK_FALSE(eval::reference("ADLGNN", "synthetic", 3).has_value());
    CHECK(eval::reference_table().size() % 12 == 0);
  }

  TEST_CASE("persistence baseline") {
    const data::TimeSeriesDataset ds(testing::gaussian_matrix(30, 3, 5));
    const data::WindowSet w(ds, 4, 2);
    const auto p = eval::persistence_forecast(w);
    REQUIRE(p.truth.rows() == static_cast<Eigen::Index>(w.size()));
    for (std::size_t j = 0; j < w.size(); ++j) {
      const auto s = w[j];
      for (Eigen::Index n = 0; n < 3; ++n) {
        CHECK(p.forecast(Eigen::Index(j), n) == s.input(n, 3));
        CHECK(p.truth(Eigen::Index(j), n) == s.target(n));
      }
    }
    const auto r = eval::score(p, "persistence", "x", 2);
    CHECK(std::isfinite(r.rse));
    CHECK(r.n_points == w.size() * 3);
    CHECK_FALSE(r.reference.has_value());
  }

  TEST_CASE("AR baseline recovers a noiseless AR(1)") {
    Matrix v(200, 2);
    v(0, 0) = 1.0;
    v(0, 1) = -2.0;
    for (Eigen::Index t = 1; t < 200; ++t) {
      v(t, 0) = 0.9 * v(t - 1, 0) + 0.1;
      v(t, 1) = -0.5 * v(t - 1, 1) + 0.3;
    }
    const data::TimeSeriesDataset ds(v);
    const eval::ArBaseline ar(ds.rows(0, 100), 2, 1);
    const auto p = ar.forecast(data::WindowSet(ds.rows(100, 200), 4, 1));
    CHECK((p.truth - p.forecast).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(ar.forecast(data::WindowSet(ds, 4, 2)), ConfigError);
  }

  TEST_CASE("evaluate errors and outputs") {
    const data::TimeSeriesDataset ds(testing::gaussian_matrix(60, 3, 7));
    model::ModelConfig mc;
    mc.window = 8;
    mc.st_blocks = 1;
    mc.channels = 4;
    mc.skip_channels = 4;
    mc.end_channels = 8;
    mc.attention_kernel = 2;
    mc.temporal_kernels = {2, 3, 4, 5};
    const model::ForecastModel m(mc, 3, Eigen::MatrixXd::Zero(3, 3), 1);
    const data::Scaler scaler = data::Scaler::fit(ds);
    const auto r = eval::evaluate(m, ds, scaler, 1, "ADLGNN", "solar");
    CHECK(r.n_points == (60 - 8) * 3);
    CHECK_FALSE(r.reference.has_value());

    const data::TimeSeriesDataset wrong(testing::gaussian_matrix(60, 4, 7));
    CHECK_THROWS_AS(eval::evaluate(m, wrong, scaler, 1), DimensionError);
    const model::ForecastModel* models[] = {&m};
    const std::size_t horizons[] = {1, 3};
    CHECK_THROWS_AS(eval::evaluate(models, horizons, ds, scaler), ConfigError);

    eval::EvalResult ref;
    ref.method = "ADLGNN";
    ref.dataset = "solar";
    ref.horizon = 3;
    ref.rse = 0.2;
    ref.corr = 0.9;
    ref.reference = eval::reference("ADLGNN", "solar", 3);
    const auto j = nlohmann::json::parse(eval::result_json(ref));
    CHECK(j["reference"]["rse"] == 0.1708);
    CHECK(nlohmann::json::parse(eval::result_json(r))["reference"].is_null());

    testing::TempDir dir("eval");
    const eval::EvalResult both[] = {r, ref};
    eval::write_results_json(dir / "r.json", both);
    eval::write_results_csv(dir / "r.csv", both);
    CHECK(nlohmann::json::parse(testing::read_text(dir / "r.json"))["results"].size() == 2);
    CHECK(testing::read_text(dir / "r.csv").find("ADLGNN") != std::string::npos);
  }

  TEST_CASE("training lowers test RSE below the untrained model") {
    synth::SynthConfig sc;
    sc.nodes = 4;
    sc.length = 600;
    sc.density = 0.5;
    sc.signed_edges = false;
    sc.seed = 3;
    const auto gen = synth::generate(sc);
    const data::TimeSeriesDataset ds(gen.values);
    const auto parts = data::split(ds, {});
    const data::Scaler scaler = data::Scaler::fit(parts.train);
    model::ModelConfig mc;
    mc.window = 8;
    mc.st_blocks = 1;
    mc.channels = 4;
    mc.skip_channels = 8;
    mc.end_channels = 8;
    mc.attention_kernel = 2;
    mc.temporal_kernels = {2, 3, 4, 5};
    mc.dropout = 0.0;
    model::ForecastModel m(mc, 4, Eigen::MatrixXd::Zero(4, 4), 4);
    const double before = eval::evaluate(m, parts.test, scaler, 1).rse;
    train::TrainConfig tc;
    tc.max_epochs = 4;
    tc.seed = 4;
    train::fit(m, data::WindowSet(scaler.apply(parts.train), 8, 1), data::WindowSet(scaler.apply(parts.valid), 8, 1),
               scaler, tc);
    CHECK(eval::evaluate(m, parts.test, scaler, 1).rse < before);
  }
}

TEST_SUITE("config") {
  TEST_CASE("parse, echo and re-parse") {
    const auto cfg = config::parse_config(
        "# run\nschema_version = 1\nmodel.channels = 8\nrun.horizons = 3, 6\nmodel.graph_mode = static-corr\n"
        "train.loss = squared\nstructure.S = 2\n");
    CHECK(cfg.model.channels == 8);
    CHECK(cfg.horizons == std::vector<std::size_t>{3, 6});
    CHECK(cfg.model.graph_mode == model::GraphMode::StaticCorr);
    CHECK(cfg.train.loss_kind == train::LossKind::Squared);
    const auto back = config::parse_config(cfg.to_text());
    CHECK(back.to_text() == cfg.to_text());
    for (const auto& k : config::keys()) CHECK(back.get(k) == cfg.get(k));
  }

  TEST_CASE("malformed configs are rejected") {
    CHECK_THROWS_AS(config::parse_config("model.channels = 8\n"), ParseError);
    CHECK_THROWS_AS(config::parse_config("schema_version = 9\n"), ParseError);
    CHECK_THROWS_AS(config::parse_config("schema_version = 1\nmodel.colour = 3\n"), ParseError);
    CHECK_THROWS_AS(config::parse_config("schema_version = 1\nmodel.channels = 8\nmodel.channels = 4\n"), ParseError);
    CHECK_THROWS_AS(config::parse_config("schema_version = 1\nmodel.channels = eight\n"), ParseError);
    CHECK_THROWS_AS(config::parse_config("schema_version = 1\nno equals sign\n"), ParseError);
    try {
      config::parse_config("schema_version = 1\n\n# ok\nmodel.beta = x\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 4);
    }
    config::RunConfig c;
    CHECK_THROWS_AS(c.set("run.unknown", "1"), ConfigError);
    CHECK_THROWS_AS(c.set("run.horizons", ""), ConfigError);
    c.horizons.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("output directory override") {
    config::RunConfig c;
    c.out_dir = "runs";
    ::unsetenv(config::kOutDirEnv);
    CHECK(config::output_dir(c) == "runs");
    ::setenv(config::kOutDirEnv, "/tmp/elsewhere", 1);
    CHECK(config::output_dir(c) == "/tmp/elsewhere");
    ::unsetenv(config::kOutDirEnv);
  }

  TEST_CASE("derived seeds") {
    CHECK(config::derive_seed(1, "model", 3) == config::derive_seed(1, "model", 3));
    CHECK(config::derive_seed(1, "model", 3) != config::derive_seed(1, "model", 6));
    CHECK(config::derive_seed(1, "model", 3) != config::derive_seed(1, "train", 3));
    CHECK(config::derive_seed(1, "model", 3) != config::derive_seed(2, "model", 3));
  }
}

TEST_SUITE("synth") {
  TEST_CASE("edge count by construction") {
    synth::SynthConfig c;
    c.seed = 7;
    const auto r = synth::generate(c);
    CHECK(r.truth.support.count() == 18);
    CHECK(r.coefficients.diagonal().isConstant(c.self_coupling));
    CHECK(r.spectral_radius < synth::kMaxSpectralRadius);
    for (Eigen::Index i = 0; i < 10; ++i)
      for (Eigen::Index j = 0; j < 10; ++j)
        CHECK((r.coefficients(i, j) != 0.0) == (i == j || r.truth.support(i, j) != 0));
  }

  TEST_CASE("noise-free runs are deterministic after burn-in") {
    synth::SynthConfig c;
    c.noise = 0.0;
    c.length = 50;
    c.seed = 1;
    const auto a = synth::generate(c);
    c.seed = 2;
    const auto b = synth::generate(c);
    CHECK(a.values.allFinite());
    CHECK(b.values.allFinite());
    CHECK(a.values == synth::generate([&] { auto k = c; k.seed = 1; return k; }()).values);
  }

  TEST_CASE("same seed writes identical files") {
    synth::SynthConfig c;
    c.length = 300;
    c.seed = 11;
    testing::TempDir dir("synth");
    synth::write(synth::generate(c), dir / "a");
    synth::write(synth::generate(c), dir / "b");
    CHECK(testing::read_text(dir / "a" / "data.txt") == testing::read_text(dir / "b" / "data.txt"));
    CHECK(testing::read_text(dir / "a" / "truth.tsv") == testing::read_text(dir / "b" / "truth.tsv"));
  }

  TEST_CASE("positive couplings and rescaling") {
    synth::SynthConfig c;
    c.signed_edges = false;
    c.seed = 4;
    const auto r = synth::generate(c);
    CHECK(r.coefficients.minCoeff() >= 0.0);

    c.coupling = 3.0;
    const auto big = synth::generate(c);
    CHECK(big.spectral_radius == doctest::Approx(0.9));
    CHECK_FALSE(big.warnings.empty());

    c.density = 0.0;
    CHECK_THROWS_AS(synth::generate(c), ConfigError);
  }
}
