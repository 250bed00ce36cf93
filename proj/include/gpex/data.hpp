#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gpex/autodiff.hpp"
#include "gpex/numkit.hpp"

namespace gpex {

struct Dataset {
  std::string name;
  std::vector<std::size_t> instance_shape;  // {F} or {C,H,W}
  std::vector<Tensor> instances;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return instances.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Throws ShapeError/ParameterError on empty sets, mixed shapes, or labels ≥ classes.
void validate(const Dataset& ds);

enum class SyntheticKind { blobs, moons, bars8x8 };

SyntheticKind synthetic_kind_from_string(const std::string& name);
std::string to_string(SyntheticKind kind);

struct SyntheticOptions {
  std::size_t classes = 2;      // blobs only
  double separation = 4.0;      // blobs: distance between neighbouring centres, in σ units
  double noise = 0.1;           // moons: jitter std; bars8x8: background amplitude
};

Dataset gen_synthetic(SyntheticKind kind, std::size_t n, std::uint64_t seed,
                      const SyntheticOptions& opts = {});

/// Raw contents of an IDX file with unsigned-byte payload.
struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> payload;
};

inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;

IdxFile parse_idx(const std::filesystem::path& path);
/// Images scaled to [0,1], shaped {1, rows, cols}.
std::vector<Tensor> idx_images(const IdxFile& f);
std::vector<std::size_t> idx_labels(const IdxFile& f);
Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::size_t classes, const std::string& name);

/// λ·a + (1−λ)·b.
Tensor mix(const Tensor& a, const Tensor& b, double lambda);

}  // namespace gpex
