// adlgnn: command line front end for graph extraction, training and evaluation.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "adlgnn/config.hpp"
#include "adlgnn/data.hpp"
#include "adlgnn/error.hpp"
#include "adlgnn/eval.hpp"
#include "adlgnn/graph_io.hpp"
#include "adlgnn/model.hpp"
#include "adlgnn/structure.hpp"
#include "adlgnn/synth.hpp"
#include "adlgnn/train.hpp"
#include "adlgnn/verify.hpp"

namespace fs = std::filesystem;
using namespace adlgnn;

namespace {

// --config plus one --<key> flag per configuration key; flags win over the file.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", file, "key = value run configuration file");
    for (const auto& key : config::keys()) cmd.add_option("--" + key, values[key], "config key " + key);
  }

  config::RunConfig resolve(const CLI::App& cmd) const {
    config::RunConfig cfg = file.empty() ? config::RunConfig{} : config::load_config(file);
    for (const auto& key : config::keys()) {
      if (cmd.count("--" + key) > 0) cfg.set(key, values.at(key));
    }
    cfg.validate();
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

data::TimeSeriesDataset load_data(const config::RunConfig& cfg) {
  if (cfg.data_path.empty()) throw ConfigError("no data file: set data.path or pass --data.path");
  data::LoadOptions opts;
  opts.forward_fill = cfg.forward_fill;
  return data::load_dataset(cfg.data_path, cfg.data_format, opts);
}

std::size_t max_horizon(const config::RunConfig& cfg) {
  return *std::max_element(cfg.horizons.begin(), cfg.horizons.end());
}

data::Splits split_for(const config::RunConfig& cfg, const data::TimeSeriesDataset& ds) {
  return data::split(ds, cfg.split, cfg.model.window + max_horizon(cfg));
}

structure::StructureConfig structure_for(const config::RunConfig& cfg) {
  structure::StructureConfig s = cfg.structure;
  if (cfg.model.graph_mode == model::GraphMode::StaticCorr) s.methods = {structure::Method::CM};
  return s;
}

void write_graph(const fs::path& dir, const structure::StaticGraph& g, const config::RunConfig& cfg,
                 const std::optional<structure::RecoveryScore>& score) {
  fs::create_directories(dir);
  structure::write_adjacency_csv(dir / "adjacency.csv", g.adjacency.weights);
  structure::Matrix mask = g.mask.support.cast<double>();
  structure::write_edge_list(dir / "mask.tsv", mask);
  auto report = nlohmann::json::parse(structure::report_json(g.report));
  report["config_echo"] = cfg.to_text();
  if (score) {
    report["recovery"] = {{"precision", score->precision},
                          {"recall", score->recall},
                          {"true_positive", score->true_positive},
                          {"predicted", score->predicted},
                          {"actual", score->actual}};
  }
  write_text(dir / "report.json", report.dump(2) + "\n");
}

fs::path model_prefix(const fs::path& dir, std::size_t horizon) { return dir / ("model_h" + std::to_string(horizon)); }

// --- subcommands -----------------------------------------------------------------

int cmd_synth(const synth::SynthConfig& sc, const fs::path& out) {
  const auto r = synth::generate(sc);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  synth::write(r, out);
  std::cout << "wrote " << (out / "data.txt").string() << " (" << sc.length << " x " << sc.nodes << ") and "
            << (out / "truth.tsv").string() << " (" << r.truth.support.cast<int>().sum() << " edges, spectral radius "
            << r.spectral_radius << ")\n";
  return 0;
}

int cmd_extract_graph(const config::RunConfig& cfg, const std::string& truth_path) {
  const auto ds = load_data(cfg);
  const auto parts = split_for(cfg, ds);
  const auto scfg = structure_for(cfg);
  scfg.validate(ds.series());
  const auto g = structure::static_graph(parts.train, scfg);
  for (const auto& w : g.report.warnings) std::cerr << "warning: " << w << "\n";
  std::optional<structure::RecoveryScore> score;
  if (!truth_path.empty()) {
    const auto truth = structure::binarize({structure::read_edge_list(truth_path, ds.series()).cwiseAbs()});
    score = structure::score_recovery(g.mask, truth);
    std::cout << "precision " << score->precision << "  recall " << score->recall << "\n";
  }
  const fs::path dir = config::output_dir(cfg);
  write_graph(dir, g, cfg, score);
  std::cout << "wrote " << (dir / "adjacency.csv").string() << ", mask.tsv, report.json\n";
  return 0;
}

int cmd_train(const config::RunConfig& cfg, const std::string& graph_path) {
  const auto ds = load_data(cfg);
  const auto parts = split_for(cfg, ds);
  const fs::path dir = config::output_dir(cfg);
  fs::create_directories(dir);

  structure::Matrix adjacency;
  if (!graph_path.empty()) {
    adjacency = structure::read_adjacency_csv(graph_path);
  } else {
    const auto scfg = structure_for(cfg);
    scfg.validate(ds.series());
    const auto g = structure::static_graph(parts.train, scfg);
    for (const auto& w : g.report.warnings) std::cerr << "warning: " << w << "\n";
    write_graph(dir, g, cfg, std::nullopt);
    adjacency = g.adjacency.weights;
  }

  const auto scaler = data::Scaler::fit(parts.train);
  const auto train_scaled = scaler.apply(parts.train);
  const auto valid_scaled = scaler.apply(parts.valid);
  const std::vector<double> scale(scaler.scale().data(), scaler.scale().data() + scaler.scale().size());

  for (auto h : cfg.horizons) {
    model::ForecastModel m(cfg.model, ds.series(), adjacency, config::derive_seed(cfg.seed, "model", h));
    train::TrainConfig tc = cfg.train;
    tc.seed = config::derive_seed(cfg.seed, "train", h);
    const data::WindowSet tw(train_scaled, cfg.model.window, h);
    const data::WindowSet vw(valid_scaled, cfg.model.window, h);

    const fs::path history_path = dir / ("history_h" + std::to_string(h) + ".jsonl");
    std::ofstream history(history_path);
    if (!history) throw Error("cannot write " + history_path.string());
    std::cerr << "horizon " << h << ": " << tw.size() << " training windows, " << m.parameters().size()
              << " parameter tensors\n";
    const auto result = train::fit(m, tw, vw, scaler, tc, [&](const train::EpochRecord& r) {
      history << train::history_line(r) << '\n' << std::flush;
      std::fprintf(stderr, "  epoch %3zu  train %.5f  val %.5f  rse %.4f  corr %.4f  batch %zu  lr %.3g  %.1fs\n",
                   r.epoch, r.train_loss, r.val_loss, r.val_rse, r.val_corr, r.batch_size, r.lr, r.seconds);
      for (const auto& e : r.events) std::fprintf(stderr, "    %s\n", e.c_str());
    });
    nlohmann::json meta{{"horizon", h},
                        {"scale", scale},
                        {"dataset", cfg.dataset_name},
                        {"best_epoch", result.best_epoch},
                        {"best_val_loss", result.best_val_loss},
                        {"diverged", result.diverged},
                        {"config_echo", cfg.to_text()}};
    m.save(model_prefix(dir, h), meta.dump());
    std::cout << "horizon " << h << ": best epoch " << result.best_epoch << ", checkpoint "
              << model_prefix(dir, h).string() << ".json\n";
    if (result.diverged) std::cerr << "warning: horizon " << h << " diverged; kept the best finite checkpoint\n";
  }
  return 0;
}

struct LoadedModel {
  model::ForecastModel model;
  data::Scaler scaler;
  std::size_t horizon;
  std::string dataset;
};

LoadedModel load_checkpoint(const fs::path& prefix) {
  std::string meta_text;
  auto m = model::ForecastModel::load(prefix, &meta_text);
  const auto meta = nlohmann::json::parse(meta_text);
  const auto scale = meta.at("scale").get<std::vector<double>>();
  data::Vector s = Eigen::Map<const data::Vector>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  return {std::move(m), data::Scaler(s), meta.at("horizon").get<std::size_t>(), meta.value("dataset", "")};
}

int cmd_evaluate(const config::RunConfig& cfg, const std::string& run_dir, bool baselines) {
  const auto ds = load_data(cfg);
  const auto parts = split_for(cfg, ds);
  const fs::path models_dir = run_dir.empty() ? config::output_dir(cfg) : fs::path(run_dir);
  std::vector<eval::EvalResult> results;
  const std::string dataset = cfg.dataset_name;
  for (auto h : cfg.horizons) {
    const auto prefix = model_prefix(models_dir, h);
    if (!fs::exists(prefix.string() + ".json")) {
      throw ConfigError("no model for horizon " + std::to_string(h) + " (expected " + prefix.string() + ".json)");
    }
    auto loaded = load_checkpoint(prefix);
    if (loaded.horizon != h) throw ConfigError("checkpoint " + prefix.string() + " was trained for another horizon");
    const std::string method = loaded.model.config().graph_mode == model::GraphMode::Dynamic  ? "ADLGNN"
                               : loaded.model.config().graph_mode == model::GraphMode::Static ? "SDLGNN"
                                                                                              : "SDLGNN-Corr";
    results.push_back(eval::evaluate(loaded.model, parts.test, loaded.scaler, h, method, dataset));
    if (baselines) {
      const data::WindowSet w(parts.test, cfg.model.window, h);
      results.push_back(eval::score(eval::persistence_forecast(w), "persistence", dataset, h));
      const eval::ArBaseline ar(parts.train, std::min<std::size_t>(cfg.model.window, 24), h);
      results.push_back(eval::score(ar.forecast(w), "AR", dataset, h));
    }
  }
  for (const auto& r : results) {
    std::printf("%-12s h=%-3zu RSE %.4f  CORR %.4f  n=%zu", r.method.c_str(), r.horizon, r.rse, r.corr, r.n_points);
    if (r.reference) std::printf("   (published RSE %.4f, CORR %.4f)", r.reference->rse, r.reference->corr);
    std::printf("\n");
  }
  const fs::path out = config::output_dir(cfg);
  fs::create_directories(out);
  eval::write_results_json(out / "results.json", results, cfg.to_text());
  eval::write_results_csv(out / "results.csv", results);
  return 0;
}

int cmd_forecast(const config::RunConfig& cfg, const std::string& checkpoint, const std::string& out_path) {
  const auto loaded = load_checkpoint(checkpoint);
  const auto ds = load_data(cfg);
  const std::size_t L = loaded.model.config().window;
  if (ds.length() < L) throw ConfigError("data shorter than the model window");
  if (ds.series() != loaded.model.nodes()) throw DimensionError("data and model disagree on the number of series");
  const data::Matrix tail = loaded.scaler.apply(ds.values().bottomRows(static_cast<Eigen::Index>(L)));
  std::vector<double> input(ds.series() * L);
  for (std::size_t n = 0; n < ds.series(); ++n)
    for (std::size_t k = 0; k < L; ++k) input[n * L + k] = tail(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  const data::Matrix pred = loaded.scaler.invert(loaded.model.predict(input, 1));
  if (out_path.empty()) {
    for (Eigen::Index n = 0; n < pred.cols(); ++n) std::printf(n ? ",%.9g" : "%.9g", pred(0, n));
    std::printf("\n");
  } else {
    data::save_matrix(out_path, pred);
  }
  std::cerr << "forecast for " << loaded.horizon << " steps after the last row\n";
  return 0;
}

int cmd_verify(std::uint64_t seed) {
  const auto results = verify::run_all(seed);
  std::cout << verify::format_table(results);
  for (const auto& r : results)
    if (!r.passed) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dependency-graph learning and spatio-temporal forecasting"};
  app.require_subcommand(1);

  auto* synth_cmd = app.add_subcommand("synth", "generate a sparse VAR(1) dataset with known coupling");
  synth::SynthConfig sc;
  std::string synth_out = "synth";
  synth_cmd->add_option("--nodes", sc.nodes, "number of series")->capture_default_str();
  synth_cmd->add_option("--length", sc.length, "time steps")->capture_default_str();
  synth_cmd->add_option("--density", sc.density, "fraction of ordered pairs with an edge")->capture_default_str();
  synth_cmd->add_option("--coupling", sc.coupling, "off-diagonal coefficient magnitude")->capture_default_str();
  synth_cmd->add_option("--self-coupling", sc.self_coupling, "own-lag coefficient")->capture_default_str();
  synth_cmd->add_flag_callback("--positive", [&sc] { sc.signed_edges = false; }, "make every coupling positive");
  synth_cmd->add_option("--noise", sc.noise, "innovation standard deviation")->capture_default_str();
  synth_cmd->add_option("--burn-in", sc.burn_in, "discarded warm-up steps")->capture_default_str();
  synth_cmd->add_option("--seed", sc.seed, "random seed")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "output directory")->capture_default_str();

  ConfigFlags extract_flags, train_flags, eval_flags, forecast_flags;
  auto* extract_cmd = app.add_subcommand("extract-graph", "estimate, fuse and sparsify the static graph");
  extract_flags.attach(*extract_cmd);
  std::string truth_path;
  extract_cmd->add_option("--truth", truth_path, "true edge list (src, dst, weight) for a recovery report");

  auto* train_cmd = app.add_subcommand("train", "train one model per horizon");
  train_flags.attach(*train_cmd);
  std::string graph_path;
  train_cmd->add_option("--graph", graph_path, "static adjacency CSV (extracted from the training split if omitted)");

  auto* eval_cmd = app.add_subcommand("evaluate", "RSE and CORR of trained models on the test split");
  eval_flags.attach(*eval_cmd);
  std::string run_dir;
  bool baselines = false;
  eval_cmd->add_option("--run-dir", run_dir, "directory holding model_h<h>.json checkpoints (default: run.out_dir)");
  eval_cmd->add_flag("--baselines", baselines, "also score persistence and AR baselines");

  auto* forecast_cmd = app.add_subcommand("forecast", "predict from the last window of a data file");
  forecast_flags.attach(*forecast_cmd);
  std::string checkpoint, forecast_out;
  forecast_cmd->add_option("--checkpoint", checkpoint, "checkpoint prefix, e.g. out/model_h3")->required();
  forecast_cmd->add_option("--out", forecast_out, "write the forecast row here instead of stdout");

  auto* verify_cmd = app.add_subcommand("verify", "run the built-in property checks");
  std::uint64_t verify_seed = 1;
  verify_cmd->add_option("--seed", verify_seed, "seed for the random fixtures")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) return cmd_synth(sc, synth_out);
    if (*extract_cmd) return cmd_extract_graph(extract_flags.resolve(*extract_cmd), truth_path);
    if (*train_cmd) return cmd_train(train_flags.resolve(*train_cmd), graph_path);
    if (*eval_cmd) return cmd_evaluate(eval_flags.resolve(*eval_cmd), run_dir, baselines);
    if (*forecast_cmd) return cmd_forecast(forecast_flags.resolve(*forecast_cmd), checkpoint, forecast_out);
    if (*verify_cmd) return cmd_verify(verify_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
