#include "gpex/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "gpex/errors.hpp"

namespace gpex {

using nlohmann::json;

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

  std::uint64_t u(std::size_t width) {
    need(width);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) {
      v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    }
    pos_ += width;
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(where_ + ": truncated at byte offset " + std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

using TensorTable = std::map<std::string, Tensor>;

void add_layers(TensorTable& table, const std::vector<Layer>& layers) {
  for (const auto& l : layers) {
    table[l.weight.name] = l.weight.value;
    table[l.bias.name] = l.bias.value;
  }
}

void take_layers(TensorTable& table, std::vector<Layer>& layers) {
  for (auto& l : layers) {
    for (Param* p : {&l.weight, &l.bias}) {
      const auto it = table.find(p->name);
      if (it == table.end()) {
        throw FormatError("checkpoint lacks tensor " + p->name);
      }
      if (it->second.shape != p->value.shape) {
        throw FormatError("checkpoint tensor " + p->name + " has shape " +
                          shape_string(it->second.shape) + ", expected " +
                          shape_string(p->value.shape));
      }
      p->value = std::move(it->second);
      p->grad = Tensor(p->value.shape);
      table.erase(it);
    }
  }
}

Tensor from_matrix(const Matrix& m) {
  return Tensor({m.rows(), m.cols()}, std::vector<double>(m.data().begin(), m.data().end()));
}

Matrix take_matrix(TensorTable& table, const std::string& name) {
  const auto it = table.find(name);
  if (it == table.end() || it->second.rank() != 2) {
    throw FormatError("checkpoint lacks matrix " + name);
  }
  Matrix m(it->second.shape[0], it->second.shape[1], std::move(it->second.data));
  table.erase(it);
  return m;
}

Vector take_vector(TensorTable& table, const std::string& name) {
  const auto it = table.find(name);
  if (it == table.end() || it->second.rank() != 1) {
    throw FormatError("checkpoint lacks vector " + name);
  }
  Vector v = std::move(it->second.data);
  table.erase(it);
  return v;
}

json spec_json(const LayerSpec& s) {
  return {{"kind", s.kind == LayerSpec::Kind::dense ? "dense" : "conv"},
          {"in", s.in},
          {"out", s.out},
          {"kernel", s.kernel},
          {"stride", s.stride},
          {"pad", s.pad},
          {"activation", to_string(s.act.kind)},
          {"alpha", s.act.alpha}};
}

LayerSpec spec_from_json(const json& j) {
  LayerSpec s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "dense" && kind != "conv") {
    throw FormatError("unknown layer kind '" + kind + "'");
  }
  s.kind = kind == "dense" ? LayerSpec::Kind::dense : LayerSpec::Kind::conv;
  s.in = j.at("in").get<std::size_t>();
  s.out = j.at("out").get<std::size_t>();
  s.kernel = j.at("kernel").get<std::size_t>();
  s.stride = j.at("stride").get<std::size_t>();
  s.pad = j.at("pad").get<std::size_t>();
  s.act.kind = activation_kind_from_string(j.at("activation").get<std::string>());
  s.act.alpha = j.at("alpha").get<double>();
  return s;
}

json specs_json(const std::vector<Layer>& layers) {
  json arr = json::array();
  for (const auto& l : layers) arr.push_back(spec_json(l.spec));
  return arr;
}

std::vector<LayerSpec> specs_from_json(const json& arr) {
  std::vector<LayerSpec> out;
  for (const auto& j : arr) out.push_back(spec_from_json(j));
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  TensorTable table;
  add_layers(table, ck.predictor.layers);
  json meta;
  meta["schema"] = 1;
  meta["format_version"] = kCheckpointVersion;
  meta["predictor"] = {{"input_shape", ck.predictor.input_shape},
                       {"layers", specs_json(ck.predictor.layers)}};
  if (ck.mapper) {
    const KernelMapper& km = *ck.mapper;
    add_layers(table, km.backbone);
    for (const auto& b : km.branches) add_layers(table, b);
    meta["mapper"] = {{"input_shape", km.input_shape},
                      {"backbone", specs_json(km.backbone)},
                      {"branch", specs_json(km.branches.front())},
                      {"heads", km.heads()},
                      {"leaky_slope", km.leaky_slope},
                      {"kernel_dim", km.kernel_dim}};
  }
  if (ck.store) {
    const InducingStore& st = *ck.store;
    json updates = json::array();
    for (std::size_t h = 0; h < st.heads(); ++h) {
      const std::string tag = std::to_string(h);
      table["store.U." + tag] = from_matrix(st.U[h]);
      table["store.V." + tag] = Tensor::vector(st.V[h]);
      table["store.gram." + tag] = from_matrix(st.gram[h].gram);
      table["store.colsum." + tag] = Tensor::vector(st.gram[h].column_sums);
      updates.push_back(st.gram[h].updates_since_rebuild);
    }
    meta["store"] = {{"heads", st.heads()},
                     {"index_map", st.index_map},
                     {"updates_since_rebuild", updates}};
  }
  meta["gp"] = {{"sigma_gp2", ck.hp.sigma_gp2},   {"sigma_g2", ck.hp.sigma_g2},
                {"sigma_phi2", ck.hp.sigma_phi2}, {"kernel_dim", ck.hp.kernel_dim},
                {"heads", ck.hp.heads},           {"inducing", ck.hp.inducing}};
  meta["inducing_source"] = ck.inducing_source;
  meta["iteration"] = ck.iteration;
  meta["rng_state"] = ck.rng_state;

  std::string bin(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(bin, kCheckpointVersion);
  put_u32(bin, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, t] : table) {
    put_u32(bin, static_cast<std::uint32_t>(name.size()));
    bin += name;
    put_u32(bin, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) put_u64(bin, d);
    for (double v : t.data) put_u64(bin, std::bit_cast<std::uint64_t>(v));
  }
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  out.write(bin.data(), static_cast<std::streamsize>(bin.size()));
  std::ofstream side(sidecar_path(path));
  side << meta.dump(2) << "\n";
  if (!out || !side) {
    throw FormatError("failed writing checkpoint " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open checkpoint " + path.string());
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(bytes, path.string());
  if (r.text(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw FormatError(path.string() + ": bad magic at byte offset 0");
  }
  const auto version = r.u(4);
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(version));
  }
  TensorTable table;
  const auto count = r.u(4);
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name = r.text(r.u(4));
    const auto rank = r.u(4);
    std::vector<std::size_t> shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(r.u(8));
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = std::bit_cast<double>(r.u(8));
    table[name] = Tensor(std::move(shape), std::move(data));
  }
  if (!r.done()) {
    throw FormatError(path.string() + ": trailing bytes at offset " + std::to_string(r.pos()));
  }

  std::ifstream side(sidecar_path(path));
  if (!side) {
    throw FormatError("cannot open checkpoint sidecar " + sidecar_path(path).string());
  }
  json meta;
  try {
    meta = json::parse(side);
  } catch (const json::exception& e) {
    throw FormatError(sidecar_path(path).string() + ": " + e.what());
  }

  Checkpoint ck;
  try {
    Rng dummy(0);
    ck.predictor = make_predictor(meta.at("predictor").at("input_shape").get<std::vector<std::size_t>>(),
                                  specs_from_json(meta.at("predictor").at("layers")), dummy);
    take_layers(table, ck.predictor.layers);
    if (meta.contains("mapper")) {
      const json& m = meta.at("mapper");
      KernelMapper km = make_mapper(m.at("input_shape").get<std::vector<std::size_t>>(),
                                    specs_from_json(m.at("backbone")),
                                    specs_from_json(m.at("branch")), m.at("heads").get<std::size_t>(),
                                    m.at("leaky_slope").get<double>(), dummy);
      take_layers(table, km.backbone);
      for (auto& b : km.branches) take_layers(table, b);
      ck.mapper = std::move(km);
    }
    if (meta.contains("store")) {
      const json& s = meta.at("store");
      InducingStore st;
      st.index_map = s.at("index_map").get<std::vector<std::size_t>>();
      const auto updates = s.at("updates_since_rebuild").get<std::vector<std::size_t>>();
      for (std::size_t h = 0; h < s.at("heads").get<std::size_t>(); ++h) {
        const std::string tag = std::to_string(h);
        st.U.push_back(take_matrix(table, "store.U." + tag));
        st.V.push_back(take_vector(table, "store.V." + tag));
        GramCache g;
        g.gram = take_matrix(table, "store.gram." + tag);
        g.column_sums = take_vector(table, "store.colsum." + tag);
        g.rows = st.U.back().rows();
        g.updates_since_rebuild = updates.at(h);
        st.gram.push_back(std::move(g));
      }
      st.reindex();
      st.check();
      ck.store = std::move(st);
    }
    const json& g = meta.at("gp");
    ck.hp.sigma_gp2 = g.at("sigma_gp2").get<double>();
    ck.hp.sigma_g2 = g.at("sigma_g2").get<double>();
    ck.hp.sigma_phi2 = g.at("sigma_phi2").get<double>();
    ck.hp.kernel_dim = g.at("kernel_dim").get<std::size_t>();
    ck.hp.heads = g.at("heads").get<std::size_t>();
    ck.hp.inducing = g.at("inducing").get<std::size_t>();
    ck.inducing_source = meta.at("inducing_source").get<std::vector<std::size_t>>();
    ck.iteration = meta.at("iteration").get<std::size_t>();
    ck.rng_state = meta.at("rng_state").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(sidecar_path(path).string() + ": " + e.what());
  }
  if (!table.empty()) {
    throw FormatError(path.string() + ": unexpected tensor " + table.begin()->first);
  }
  return ck;
}

}  // namespace gpex
