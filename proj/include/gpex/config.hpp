#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gpex/distill.hpp"
#include "gpex/gp.hpp"

namespace gpex {

/// section -> key -> raw value
using IniSections = std::map<std::string, std::map<std::string, std::string>>;

/// `[section]` headers, `key = value` lines, `#`/`;` comments. Duplicate keys
/// and malformed lines raise ConfigError with the line number.
IniSections parse_ini(std::string_view text, const std::string& where = "config");

struct DataConfig {
  std::string kind = "blobs";  // blobs | moons | bars8x8 | idx
  std::size_t n_train = 512;
  std::size_t n_test = 256;
  std::size_t classes = 2;
  double separation = 4.0;
  double noise = 0.1;
  std::string train_images, train_labels, test_images, test_labels;
  double corruption = 0.45;  // debug-dataset only
};

struct NetConfig {
  std::vector<std::size_t> hidden;
  std::vector<std::size_t> conv_channels;  // used for image inputs
  std::string activation = "relu";
};

struct PredictorTraining {
  std::size_t epochs = 200;
  std::size_t batch = 32;
  double lr = 1e-3;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  NetConfig predictor{{64, 64}, {8, 8}, "relu"};
  PredictorTraining predictor_training;
  NetConfig mapper{{64, 64}, {8, 8}, "tanh"};
  std::size_t kernel_dim = 20;
  double leaky_slope = 0.01;
  GpHyper gp{.inducing = 512};
  DistillConfig distill;
  std::size_t explain_k = 10;
  std::vector<std::size_t> explain_tests{0};
  std::vector<std::size_t> sweep_sizes{16, 64, 256, 1024};
  std::size_t sweep_splits = 5;
  std::size_t debug_random_orders = 20;
};

/// Builds a RunConfig from INI sections; unknown sections or keys are errors.
RunConfig run_config_from_ini(const IniSections& ini);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical INI text listing every key, suitable for round-tripping.
std::string to_ini(const RunConfig& cfg);

}  // namespace gpex
