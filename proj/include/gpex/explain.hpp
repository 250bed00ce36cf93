#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gpex/data.hpp"
#include "gpex/distill.hpp"
#include "gpex/gp.hpp"
#include "gpex/nn.hpp"
#include "gpex/numkit.hpp"

namespace gpex {

/// Per-location split of K(x1, x2) for one head. Each map is H×W and sums to
/// `total`.
struct ContributionMaps {
  Matrix on_x1;
  Matrix on_x2;
  double total = 0.0;
};

/// Requires a spatial mapper (branches ending in C×H×W maps); CapabilityError otherwise.
ContributionMaps contribution_maps(const Tensor& x1, const Tensor& x2, const KernelMapper& km,
                                   std::size_t head);

struct ExplanationReport {
  std::size_t test_index = 0;
  std::size_t head = 0;
  std::vector<std::size_t> neighbor_indices;  // dataset indices of the inducing set
  Vector similarities;                        // descending
  std::vector<Matrix> contrib_on_neighbor;
  std::vector<Matrix> contrib_on_test;
};

/// Top-k inducing points by fᵀf in the space of the predictor's argmax head.
/// Ranks against the rows stored in `store`; ties go to the lower row.
ExplanationReport knn_explain(const Tensor& x_test, const InducingStore& store,
                              const KernelMapper& km, const Predictor& p, std::size_t k);

/// Fills the contribution maps of `report` against each neighbor.
void attach_contribution_maps(ExplanationReport& report, const Tensor& x_test,
                              const Dataset& inducing, const KernelMapper& km);

struct FaithfulnessReport {
  HeadCorrelations pearson;
  std::size_t n_probe = 0;
  double ann_accuracy = 0.0;
  double gp_accuracy = 0.0;
};

FaithfulnessReport faithfulness(const Predictor& p, const InducingStore& store,
                                const KernelMapper& km, const GpHyper& hp,
                                const Dataset& probe);

struct DebugSession {
  std::vector<bool> corrupted_mask;
  std::vector<std::size_t> presentation_order;
  std::vector<std::size_t> discovery_curve;  // corrupted found after k+1 shown
};

/// Labels of a random `fraction` of instances moved to a different class.
/// Returns the corrupted copy and its mask.
std::pair<Dataset, std::vector<bool>> corrupt_labels(const Dataset& ds, double fraction,
                                                     std::uint64_t seed);

/// Round-robin over misclassified test instances in ascending index order;
/// each shows its nearest not-yet-shown training instance in the kernel space
/// of its predicted head. With no misclassified tests the remainder follows a
/// seeded random order.
DebugSession dataset_debug(const Dataset& train, const std::vector<bool>& corrupted_mask,
                           const Dataset& test, const Predictor& p, const KernelMapper& km,
                           std::uint64_t seed);

/// Discovery curve of a seeded random presentation order.
DebugSession random_debug_order(const std::vector<bool>& corrupted_mask, std::uint64_t seed);

std::vector<std::size_t> discovery_curve(const std::vector<bool>& corrupted_mask,
                                         std::span<const std::size_t> order);

}  // namespace gpex
