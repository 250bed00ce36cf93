#include "gpex/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "gpex/errors.hpp"

namespace gpex {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v.front() == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(out);
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_counts(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(to_count(key, trim(item)));
  }
  return out;
}

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string counts_text(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define COUNT_FIELD(member)                                                             \
  Field {                                                                               \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_count(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                     \
  }
#define REAL_FIELD(member)                                                              \
  Field {                                                                               \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_real(k, v); }, \
        [](const RunConfig& c) { return real_text(c.member); }                          \
  }
#define BOOL_FIELD(member)                                                              \
  Field {                                                                               \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }     \
  }
#define TEXT_FIELD(member)                                                              \
  Field {                                                                               \
    [](RunConfig& c, const std::string&, const std::string& v) { c.member = v; },       \
        [](const RunConfig& c) { return c.member; }                                     \
  }
#define COUNTS_FIELD(member)                                                            \
  Field {                                                                               \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_counts(k, v); }, \
        [](const RunConfig& c) { return counts_text(c.member); }                        \
  }

// Ordered so to_ini output is stable.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"run.seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.seed = to_count(k, v);
        },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"data.kind", TEXT_FIELD(data.kind)},
      {"data.n_train", COUNT_FIELD(data.n_train)},
      {"data.n_test", COUNT_FIELD(data.n_test)},
      {"data.classes", COUNT_FIELD(data.classes)},
      {"data.separation", REAL_FIELD(data.separation)},
      {"data.noise", REAL_FIELD(data.noise)},
      {"data.train_images", TEXT_FIELD(data.train_images)},
      {"data.train_labels", TEXT_FIELD(data.train_labels)},
      {"data.test_images", TEXT_FIELD(data.test_images)},
      {"data.test_labels", TEXT_FIELD(data.test_labels)},
      {"data.corruption", REAL_FIELD(data.corruption)},
      {"predictor.hidden", COUNTS_FIELD(predictor.hidden)},
      {"predictor.conv_channels", COUNTS_FIELD(predictor.conv_channels)},
      {"predictor.activation", TEXT_FIELD(predictor.activation)},
      {"predictor.epochs", COUNT_FIELD(predictor_training.epochs)},
      {"predictor.batch", COUNT_FIELD(predictor_training.batch)},
      {"predictor.lr", REAL_FIELD(predictor_training.lr)},
      {"mapper.hidden", COUNTS_FIELD(mapper.hidden)},
      {"mapper.conv_channels", COUNTS_FIELD(mapper.conv_channels)},
      {"mapper.activation", TEXT_FIELD(mapper.activation)},
      {"mapper.kernel_dim", COUNT_FIELD(kernel_dim)},
      {"mapper.leaky_slope", REAL_FIELD(leaky_slope)},
      {"gp.sigma_gp2", REAL_FIELD(gp.sigma_gp2)},
      {"gp.sigma_g2", REAL_FIELD(gp.sigma_g2)},
      {"gp.inducing", COUNT_FIELD(gp.inducing)},
      {"distill.max_iter", COUNT_FIELD(distill.max_iter)},
      {"distill.train_batch", COUNT_FIELD(distill.train_batch)},
      {"distill.inducing_batch", COUNT_FIELD(distill.inducing_batch)},
      {"distill.refresh_batch", COUNT_FIELD(distill.refresh_batch)},
      {"distill.lr", REAL_FIELD(distill.lr)},
      {"distill.mixing", BOOL_FIELD(distill.mixing)},
      {"distill.mix_low", REAL_FIELD(distill.mix_low)},
      {"distill.mix_high", REAL_FIELD(distill.mix_high)},
      {"distill.checkpoint_every", COUNT_FIELD(distill.checkpoint_every)},
      {"distill.probe_every", COUNT_FIELD(distill.probe_every)},
      {"distill.eps_cov", REAL_FIELD(distill.eps_cov)},
      {"distill.lr_decay_every", COUNT_FIELD(distill.lr_decay_every)},
      {"distill.lr_decay", REAL_FIELD(distill.lr_decay)},
      {"distill.final_refresh", BOOL_FIELD(distill.final_refresh)},
      {"explain.k", COUNT_FIELD(explain_k)},
      {"explain.test_indices", COUNTS_FIELD(explain_tests)},
      {"sweep.sizes", COUNTS_FIELD(sweep_sizes)},
      {"sweep.splits", COUNT_FIELD(sweep_splits)},
      {"debug.random_orders", COUNT_FIELD(debug_random_orders)},
  };
  return table;
}

}  // namespace

IniSections parse_ini(std::string_view text, const std::string& where) {
  IniSections out;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    const std::string at = where + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError(at + ": malformed section header '" + line + "'");
      }
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      out[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(at + ": expected 'key = value', got '" + line + "'");
    }
    if (section.empty()) {
      throw ConfigError(at + ": key outside of any section");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(at + ": empty key");
    }
    if (!out[section].emplace(key, value).second) {
      throw ConfigError(at + ": duplicate key '" + section + "." + key + "'");
    }
  }
  return out;
}

RunConfig run_config_from_ini(const IniSections& ini) {
  std::map<std::string, const Field*> lookup;
  for (const auto& [name, field] : fields()) {
    lookup[name] = &field;
  }
  RunConfig cfg;
  for (const auto& [section, entries] : ini) {
    for (const auto& [key, value] : entries) {
      const std::string name = section + "." + key;
      const auto it = lookup.find(name);
      if (it == lookup.end()) {
        throw ConfigError("unknown config key '" + name + "'");
      }
      it->second->set(cfg, name, value);
    }
  }
  cfg.distill.seed = cfg.seed;
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config file " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_ini(parse_ini(ss.str(), path.string()));
}

std::string to_ini(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& [name, field] : fields()) {
    const auto dot_at = name.find('.');
    const std::string sec = name.substr(0, dot_at);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += name.substr(dot_at + 1) + " = " + field.get(cfg) + "\n";
  }
  return out;
}

}  // namespace gpex
