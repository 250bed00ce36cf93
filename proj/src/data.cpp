#include "gpex/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>

#include "gpex/errors.hpp"

namespace gpex {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.instance_shape = instance_shape;
  out.classes = classes;
  out.instances.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) {
      throw LookupError("dataset index " + std::to_string(i) + " out of range");
    }
    out.instances.push_back(instances[i]);
    out.labels.push_back(labels[i]);
  }
  return out;
}

void validate(const Dataset& ds) {
  if (ds.instances.empty()) {
    throw ParameterError("dataset '" + ds.name + "' is empty");
  }
  if (ds.labels.size() != ds.instances.size()) {
    throw ShapeError("dataset '" + ds.name + "': label count differs from instance count");
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.instances[i].shape != ds.instance_shape) {
      throw ShapeError("dataset '" + ds.name + "': instance " + std::to_string(i) + " has shape " +
                       shape_string(ds.instances[i].shape));
    }
    if (ds.labels[i] >= ds.classes) {
      throw ParameterError("dataset '" + ds.name + "': label " + std::to_string(ds.labels[i]) +
                           " at " + std::to_string(i) + " is not below " +
                           std::to_string(ds.classes));
    }
  }
}

SyntheticKind synthetic_kind_from_string(const std::string& name) {
  if (name == "blobs") return SyntheticKind::blobs;
  if (name == "moons") return SyntheticKind::moons;
  if (name == "bars8x8") return SyntheticKind::bars8x8;
  throw ParameterError("unknown synthetic dataset '" + name + "'");
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::blobs:
      return "blobs";
    case SyntheticKind::moons:
      return "moons";
    case SyntheticKind::bars8x8:
      return "bars8x8";
  }
  return "blobs";
}

Dataset gen_synthetic(SyntheticKind kind, std::size_t n, std::uint64_t seed,
                      const SyntheticOptions& opts) {
  if (n < 2) {
    throw ParameterError("synthetic datasets need n >= 2");
  }
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset ds;
  ds.name = to_string(kind);
  switch (kind) {
    case SyntheticKind::blobs: {
      const std::size_t k = opts.classes;
      if (k < 2) {
        throw ParameterError("blobs need at least two classes");
      }
      const double radius = opts.separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(k)));
      ds.classes = k;
      ds.instance_shape = {2};
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % k;
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(k);
        const double x = radius * std::cos(angle) + gauss(rng);
        const double y = radius * std::sin(angle) + gauss(rng);
        ds.instances.push_back(Tensor::vector({x, y}));
        ds.labels.push_back(label);
      }
      break;
    }
    case SyntheticKind::moons: {
      ds.classes = 2;
      ds.instance_shape = {2};
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % 2;
        const double t = std::numbers::pi * unit(rng);
        double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
        double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
        x += opts.noise * gauss(rng);
        y += opts.noise * gauss(rng);
        ds.instances.push_back(Tensor::vector({x, y}));
        ds.labels.push_back(label);
      }
      break;
    }
    case SyntheticKind::bars8x8: {
      constexpr std::size_t side = 8;
      ds.classes = 2;
      ds.instance_shape = {1, side, side};
      std::uniform_int_distribution<std::size_t> pos(0, side - 1);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % 2;  // 0 horizontal, 1 vertical
        const std::size_t at = pos(rng);
        Tensor img({1, side, side});
        for (double& v : img.data) {
          v = opts.noise * unit(rng);
        }
        for (std::size_t k = 0; k < side; ++k) {
          const std::size_t r = label == 0 ? at : k;
          const std::size_t c = label == 0 ? k : at;
          img.data[r * side + c] = 1.0;
        }
        ds.instances.push_back(std::move(img));
        ds.labels.push_back(label);
      }
      break;
    }
  }
  return ds;
}

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

IdxFile parse_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open IDX file " + path.string());
  }
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < 4) {
    throw FormatError(where + ": truncated header at byte offset " + std::to_string(bytes.size()));
  }
  IdxFile f;
  f.magic = read_be32(bytes, 0);
  if (f.magic != kIdxLabelsMagic && f.magic != kIdxImagesMagic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", f.magic);
    throw FormatError(where + ": bad magic " + buf + " at byte offset 0");
  }
  const std::size_t ndims = f.magic & 0xffu;
  std::size_t offset = 4;
  for (std::size_t d = 0; d < ndims; ++d) {
    if (offset + 4 > bytes.size()) {
      throw FormatError(where + ": truncated dimension table at byte offset " +
                        std::to_string(offset));
    }
    f.dims.push_back(read_be32(bytes, offset));
    offset += 4;
  }
  const std::size_t expected = shape_size(f.dims);
  const std::size_t actual = bytes.size() - offset;
  if (actual != expected) {
    throw FormatError(where + ": payload at byte offset " + std::to_string(offset) +
                      " has " + std::to_string(actual) + " bytes, expected " +
                      std::to_string(expected));
  }
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return f;
}

std::vector<Tensor> idx_images(const IdxFile& f) {
  if (f.magic != kIdxImagesMagic) {
    throw FormatError("IDX file does not hold images");
  }
  if (f.dims.size() != 3) {
    throw FormatError("IDX image file must have 3 dimensions, got " + std::to_string(f.dims.size()));
  }
  const std::size_t n = f.dims[0];
  const std::size_t rows = f.dims[1];
  const std::size_t cols = f.dims[2];
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img({1, rows, cols});
    for (std::size_t k = 0; k < rows * cols; ++k) {
      img.data[k] = static_cast<double>(f.payload[i * rows * cols + k]) / 255.0;
    }
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<std::size_t> idx_labels(const IdxFile& f) {
  if (f.magic != kIdxLabelsMagic) {
    throw FormatError("IDX file does not hold labels");
  }
  if (f.dims.size() != 1) {
    throw FormatError("IDX label file must have 1 dimension, got " + std::to_string(f.dims.size()));
  }
  return {f.payload.begin(), f.payload.end()};
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::size_t classes, const std::string& name) {
  const IdxFile img = parse_idx(images);
  const IdxFile lab = parse_idx(labels);
  Dataset ds;
  ds.name = name;
  ds.instances = idx_images(img);
  ds.labels = idx_labels(lab);
  ds.classes = classes;
  if (ds.instances.size() != ds.labels.size()) {
    throw FormatError("IDX image count " + std::to_string(ds.instances.size()) +
                      " differs from label count " + std::to_string(ds.labels.size()));
  }
  if (!ds.instances.empty()) {
    ds.instance_shape = ds.instances.front().shape;
  }
  validate(ds);
  return ds;
}

Tensor mix(const Tensor& a, const Tensor& b, double lambda) {
  if (a.shape != b.shape) {
    throw ShapeError("mix: shapes " + shape_string(a.shape) + " and " + shape_string(b.shape));
  }
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.data[i] = lambda * a.data[i] + (1.0 - lambda) * b.data[i];
  }
  return out;
}

}  // namespace gpex
