#include "gpex/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gpex/checkpoint.hpp"
#include "gpex/config.hpp"
#include "gpex/errors.hpp"
#include "gpex/explain.hpp"
#include "gpex/pipeline.hpp"
#include "gpex/reports.hpp"

namespace gpex {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "gpex-out";
  std::string checkpoint;
  std::optional<std::size_t> max_iter;

  fs::path checkpoint_path() const {
    return checkpoint.empty() ? fs::path(out) / "model.ckpt" : fs::path(checkpoint);
  }
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
  }
  cfg.distill.seed = cfg.seed;
  if (o.max_iter) {
    cfg.distill.max_iter = *o.max_iter;
  }
  return cfg;
}

json correlations_json(const HeadCorrelations& r) {
  json arr = json::array();
  for (const auto& v : r) {
    arr.push_back(v ? json(*v) : json(nullptr));
  }
  return arr;
}

std::string rng_text(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

Checkpoint require_distilled(const fs::path& path) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.mapper || !ck.store) {
    throw StateError("checkpoint " + path.string() + " holds no distilled GP; run distill first");
  }
  return ck;
}

void emit_line(const std::string& msg) { std::cout << msg << "\n"; }

int cmd_train_ann(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const Splits data = build_datasets(cfg);
  const PredictorFit fit = train_predictor(cfg, data.train);
  Checkpoint ck;
  ck.predictor = fit.predictor;
  ck.hp = cfg.gp;
  ck.hp.kernel_dim = cfg.kernel_dim;
  ck.hp.heads = fit.predictor.heads();
  save_checkpoint(o.checkpoint_path(), ck);
  const double test_acc = accuracy(fit.predictor, data.test);
  write_json(fs::path(o.out) / "train_ann.json",
             {{"command", "train-ann"},
              {"seed", cfg.seed},
              {"dataset", data.train.name},
              {"n_train", data.train.size()},
              {"n_test", data.test.size()},
              {"epochs", cfg.predictor_training.epochs},
              {"final_loss", fit.final_loss},
              {"train_accuracy", fit.train_accuracy},
              {"test_accuracy", test_acc}});
  emit_line("train-ann: train accuracy " + std::to_string(fit.train_accuracy) +
            ", test accuracy " + std::to_string(test_acc));
  return kExitOk;
}

int cmd_distill(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const fs::path ck_path = o.checkpoint_path();
  Checkpoint base = load_checkpoint(ck_path);
  const Splits data = build_datasets(cfg);
  const std::vector<std::size_t> source = inducing_for_split(cfg, data.train.size(), 0);

  DistillHooks hooks;
  hooks.checkpoint = [&](std::size_t iter, const KernelMapper& km, const InducingStore& store,
                         const TrainTrace&, const Rng& rng) {
    Checkpoint ck;
    ck.predictor = base.predictor;
    ck.mapper = km;
    ck.store = store;
    ck.hp = cfg.gp;
    ck.hp.kernel_dim = cfg.kernel_dim;
    ck.hp.heads = km.heads();
    ck.hp.inducing = store.size();
    ck.inducing_source = source;
    ck.iteration = iter;
    ck.rng_state = rng_text(rng);
    save_checkpoint(ck_path, ck);
  };
  const DistillRun run = run_distill(cfg, base.predictor, data.train, &data.test, 0, hooks);
  const std::size_t heads = run.mapper.heads();
  write_text(fs::path(o.out) / "trace.csv", run.result.trace.to_csv(heads));
  json report = {{"command", "distill"},
                 {"seed", cfg.seed},
                 {"iterations", run.result.trace.loss.size()},
                 {"inducing", run.result.store.size()},
                 {"mixing", cfg.distill.mixing},
                 {"sigma_gp2", run.hp.sigma_gp2}};
  report["final_loss"] =
      run.result.trace.loss.empty() ? json(nullptr) : json(run.result.trace.loss.back());
  report["probe_pearson"] = run.result.trace.probes.empty()
                                ? json(nullptr)
                                : correlations_json(run.result.trace.probes.back().r);
  write_json(fs::path(o.out) / "distill.json", report);
  emit_line("distill: " + std::to_string(run.result.trace.loss.size()) + " iterations, checkpoint " +
            ck_path.string());
  return kExitOk;
}

// First channel of an instance as an H×W map; flat instances become a 1×F strip.
Matrix instance_image(const Tensor& x) {
  if (x.rank() == 3) {
    Matrix m(x.shape[1], x.shape[2]);
    std::copy(x.data.begin(), x.data.begin() + static_cast<std::ptrdiff_t>(m.rows() * m.cols()),
              m.data().begin());
    return m;
  }
  return Matrix(1, x.size(), x.data);
}

Matrix tile_row(const std::vector<Matrix>& tiles) {
  const std::size_t h = tiles.front().rows();
  const std::size_t w = tiles.front().cols();
  double lo = tiles.front()(0, 0);
  for (const auto& t : tiles) {
    for (double v : t.data()) lo = std::min(lo, v);
  }
  Matrix grid(h, tiles.size() * (w + 1) - 1, lo);
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        grid(i, k * (w + 1) + j) = tiles[k](i, j);
      }
    }
  }
  return grid;
}

int cmd_explain(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  Checkpoint ck = require_distilled(o.checkpoint_path());
  const Splits data = build_datasets(cfg);
  const Dataset inducing = data.train.subset(ck.inducing_source);
  KernelMapper& km = *ck.mapper;
  InducingStore store = *ck.store;
  rebuild_inducing_rows(store, km, inducing);

  json items = json::array();
  for (std::size_t t : cfg.explain_tests) {
    if (t >= data.test.size()) {
      throw LookupError("test index " + std::to_string(t) + " out of range");
    }
    const Tensor& x = data.test.instances[t];
    ExplanationReport rep = knn_explain(x, store, km, ck.predictor, std::min(cfg.explain_k, store.size()));
    rep.test_index = t;
    json item = {{"test_index", t}, {"label", data.test.labels[t]}, {"head", rep.head}};
    json neighbors = json::array();
    for (std::size_t r = 0; r < rep.neighbor_indices.size(); ++r) {
      const std::size_t train_idx = ck.inducing_source.at(rep.neighbor_indices[r]);
      neighbors.push_back({{"rank", r},
                           {"inducing_index", rep.neighbor_indices[r]},
                           {"train_index", train_idx},
                           {"train_label", data.train.labels[train_idx]},
                           {"similarity", rep.similarities[r]}});
    }
    const std::string stem = "explain_t" + std::to_string(t);
    std::vector<Matrix> tiles{instance_image(x)};
    for (std::size_t idx : rep.neighbor_indices) {
      tiles.push_back(instance_image(inducing.instances[idx]));
    }
    const PgmScale grid_scale = write_pgm(fs::path(o.out) / (stem + "_grid.pgm"), tile_row(tiles));
    item["grid"] = {{"file", stem + "_grid.pgm"}, {"min", grid_scale.min}, {"max", grid_scale.max}};
    if (km.spatial()) {
      attach_contribution_maps(rep, x, inducing, km);
      for (std::size_t r = 0; r < rep.neighbor_indices.size(); ++r) {
        const std::string base = stem + "_n" + std::to_string(r);
        const PgmScale st = write_pgm(fs::path(o.out) / (base + "_test.pgm"), rep.contrib_on_test[r]);
        const PgmScale sn =
            write_pgm(fs::path(o.out) / (base + "_neighbor.pgm"), rep.contrib_on_neighbor[r]);
        neighbors[r]["contrib_on_test"] = {
            {"file", base + "_test.pgm"}, {"min", st.min}, {"max", st.max}};
        neighbors[r]["contrib_on_neighbor"] = {
            {"file", base + "_neighbor.pgm"}, {"min", sn.min}, {"max", sn.max}};
      }
    }
    item["neighbors"] = std::move(neighbors);
    items.push_back(std::move(item));
  }
  write_json(fs::path(o.out) / "explain.json",
             {{"command", "explain"}, {"seed", cfg.seed}, {"k", cfg.explain_k}, {"tests", items}});
  emit_line("explain: " + std::to_string(items.size()) + " test instances");
  return kExitOk;
}

int cmd_faithfulness(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const Checkpoint ck = require_distilled(o.checkpoint_path());
  const Splits data = build_datasets(cfg);
  const FaithfulnessReport rep = faithfulness(ck.predictor, *ck.store, *ck.mapper, ck.hp, data.test);
  std::string csv = "head,pearson,n_probe\n";
  for (std::size_t h = 0; h < rep.pearson.size(); ++h) {
    std::ostringstream r;
    if (rep.pearson[h]) {
      r.precision(17);
      r << *rep.pearson[h];
    } else {
      r << "undefined";
    }
    csv += std::to_string(h) + "," + r.str() + "," + std::to_string(rep.n_probe) + "\n";
  }
  write_text(fs::path(o.out) / "faithfulness.csv", csv);
  write_json(fs::path(o.out) / "faithfulness.json",
             {{"command", "faithfulness"},
              {"seed", cfg.seed},
              {"n_probe", rep.n_probe},
              {"pearson", correlations_json(rep.pearson)},
              {"ann_accuracy", rep.ann_accuracy},
              {"gp_accuracy", rep.gp_accuracy}});
  emit_line("faithfulness: ANN accuracy " + std::to_string(rep.ann_accuracy) + ", GP accuracy " +
            std::to_string(rep.gp_accuracy));
  return kExitOk;
}

int cmd_debug(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const DebugRun run = run_debug(cfg);
  const std::size_t n = run.gpex.discovery_curve.size();
  std::vector<double> random_mean(n, 0.0);
  for (const auto& s : run.random) {
    for (std::size_t i = 0; i < n; ++i) random_mean[i] += static_cast<double>(s.discovery_curve[i]);
  }
  for (double& v : random_mean) v /= static_cast<double>(std::max<std::size_t>(1, run.random.size()));
  json checkpoints = json::array();
  for (double f : {0.10, 0.25, 0.50}) {
    const double gp_found = curve_at(run.gpex.discovery_curve, f);
    auto shown = static_cast<std::size_t>(std::ceil(f * static_cast<double>(n)));
    shown = std::clamp<std::size_t>(shown, 1, n);
    checkpoints.push_back({{"fraction_shown", f},
                           {"shown", shown},
                           {"gpex_found", gp_found},
                           {"random_mean_found", random_mean[shown - 1]}});
  }
  json randoms = json::array();
  for (const auto& s : run.random) randoms.push_back(s.discovery_curve);
  write_json(fs::path(o.out) / "debug.json",
             {{"command", "debug-dataset"},
              {"seed", cfg.seed},
              {"corruption", cfg.data.corruption},
              {"n_train", n},
              {"corrupted", run.corrupted},
              {"misclassified_tests", run.misclassified},
              {"ann_test_accuracy", run.ann_accuracy},
              {"checkpoints", checkpoints},
              {"gpex_order", run.gpex.presentation_order},
              {"gpex_curve", run.gpex.discovery_curve},
              {"random_mean_curve", random_mean},
              {"random_curves", randoms}});
  emit_line("debug-dataset: " + std::to_string(run.corrupted) + " corrupted of " +
            std::to_string(n) + ", " + std::to_string(run.misclassified) +
            " misclassified test instances");
  return kExitOk;
}

int cmd_sweep(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const Splits data = build_datasets(cfg);
  Predictor p;
  if (!o.checkpoint.empty()) {
    p = load_checkpoint(o.checkpoint).predictor;
  } else {
    p = train_predictor(cfg, data.train).predictor;
  }
  const SweepRun run = run_sweep(cfg, p, data.train, data.test);
  std::string csv = "inducing,split,mean_r";
  for (std::size_t h = 0; h < p.heads(); ++h) csv += ",r_head_" + std::to_string(h);
  csv += "\n";
  json points = json::array();
  for (const auto& pt : run.points) {
    std::ostringstream line;
    line.precision(17);
    line << pt.inducing << "," << pt.split << "," << pt.mean_r;
    for (const auto& r : pt.r) {
      line << ",";
      if (r) line << *r;
    }
    csv += line.str() + "\n";
    points.push_back({{"inducing", pt.inducing},
                      {"split", pt.split},
                      {"mean_r", pt.mean_r},
                      {"pearson", correlations_json(pt.r)}});
  }
  json summary = json::array();
  for (const auto& s : run.summary) {
    summary.push_back({{"inducing", s.inducing}, {"mean_r", s.mean}, {"std_error", s.std_error}});
  }
  write_text(fs::path(o.out) / "sweep.csv", csv);
  write_json(fs::path(o.out) / "sweep.json", {{"command", "sweep-inducing"},
                                              {"seed", cfg.seed},
                                              {"splits", cfg.sweep_splits},
                                              {"points", points},
                                              {"summary", summary}});
  emit_line("sweep-inducing: " + std::to_string(run.points.size()) + " runs");
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Distill a trained predictor into inducing-point GPs and explain it", "gpex"};
  app.require_subcommand(1);
  Options opts;
  std::uint64_t seed = 0;
  std::size_t max_iter = 0;
  app.add_option("--config", opts.config, "INI configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "Override run.seed");
  app.add_option("--out", opts.out, "Output directory for reports");
  app.add_option("--checkpoint", opts.checkpoint, "Checkpoint path (default <out>/model.ckpt)");

  auto* train = app.add_subcommand("train-ann", "Fit the predictor with cross-entropy");
  auto* distill = app.add_subcommand("distill", "Distill the predictor into GPs");
  auto* max_iter_opt = distill->add_option("--max-iter", max_iter, "Override distill.max_iter");
  auto* explain = app.add_subcommand("explain", "Nearest inducing points and contribution maps");
  auto* faith = app.add_subcommand("faithfulness", "Per-head Pearson and accuracies");
  auto* debug = app.add_subcommand("debug-dataset", "Label-debugging order versus random orders");
  auto* sweep = app.add_subcommand("sweep-inducing", "Faithfulness across inducing-set sizes");
  for (auto* sub : {train, distill, explain, faith, debug, sweep}) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (seed_opt->count() > 0) opts.seed = seed;
  if (max_iter_opt->count() > 0) opts.max_iter = max_iter;

  try {
    if (train->parsed()) return cmd_train_ann(opts);
    if (distill->parsed()) return cmd_distill(opts);
    if (explain->parsed()) return cmd_explain(opts);
    if (faith->parsed()) return cmd_faithfulness(opts);
    if (debug->parsed()) return cmd_debug(opts);
    if (sweep->parsed()) return cmd_sweep(opts);
  } catch (const std::exception& e) {
    std::cerr << "gpex: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace gpex
