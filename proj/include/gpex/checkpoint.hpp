#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gpex/gp.hpp"
#include "gpex/nn.hpp"

namespace gpex {

inline constexpr char kCheckpointMagic[8] = {'G', 'P', 'E', 'X', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Predictor predictor;
  std::optional<KernelMapper> mapper;
  std::optional<InducingStore> store;
  GpHyper hp;
  std::vector<std::size_t> inducing_source;  // training-set index of each inducing instance
  std::size_t iteration = 0;
  std::string rng_state;  // textual engine state
};

/// Writes `path` (tensor payload) and `path` + ".json" (metadata sidecar).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace gpex
