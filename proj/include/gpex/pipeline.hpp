#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gpex/config.hpp"
#include "gpex/data.hpp"
#include "gpex/distill.hpp"
#include "gpex/explain.hpp"
#include "gpex/nn.hpp"

namespace gpex {

/// Independent stream seed for sub-task `tag` of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

struct Splits {
  Dataset train;
  Dataset test;
};

Splits build_datasets(const RunConfig& cfg);

std::vector<LayerSpec> predictor_specs(const RunConfig& cfg,
                                       const std::vector<std::size_t>& input_shape,
                                       std::size_t classes);

struct PredictorFit {
  Predictor predictor;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
};

/// Plain cross-entropy with Adam over shuffled mini-batches.
PredictorFit train_predictor(const RunConfig& cfg, const Dataset& train);

double accuracy(const Predictor& p, const Dataset& ds);

KernelMapper build_mapper(const RunConfig& cfg, const std::vector<std::size_t>& input_shape,
                          std::size_t heads, std::uint64_t seed);

/// min(count, n) training indices, ascending; all of them when count ≥ n.
std::vector<std::size_t> choose_inducing(std::size_t n, std::size_t count, std::uint64_t seed);

/// Training-set indices forming the inducing set of `split`.
std::vector<std::size_t> inducing_for_split(const RunConfig& cfg, std::size_t n_train,
                                            std::uint64_t split);

struct DistillRun {
  KernelMapper mapper;
  DistillResult result;
  GpHyper hp;
  std::vector<std::size_t> inducing_source;
};

/// Fresh mapper distilled against `p` with `split` selecting the inducing
/// subset and mapper initialisation.
DistillRun run_distill(const RunConfig& cfg, const Predictor& p, const Dataset& train,
                       const Dataset* probe, std::uint64_t split, const DistillHooks& hooks = {});

struct DebugRun {
  DebugSession gpex;
  std::vector<DebugSession> random;
  double ann_accuracy = 0.0;  // on the clean test set
  std::size_t misclassified = 0;
  std::size_t corrupted = 0;
};

/// Corrupts training labels, fits a predictor, distills it and orders the
/// training set for review.
DebugRun run_debug(const RunConfig& cfg);

/// Corrupted-found counts after ⌈fraction·N⌉ instances are shown.
double curve_at(const std::vector<std::size_t>& curve, double fraction);

struct SweepPoint {
  std::size_t inducing = 0;
  std::size_t split = 0;
  HeadCorrelations r;
  double mean_r = 0.0;  // over defined heads
};

struct SweepSummary {
  std::size_t inducing = 0;
  double mean = 0.0;
  double std_error = 0.0;
};

struct SweepRun {
  std::vector<SweepPoint> points;
  std::vector<SweepSummary> summary;
};

SweepRun run_sweep(const RunConfig& cfg, const Predictor& p, const Dataset& train,
                   const Dataset& probe);

}  // namespace gpex
