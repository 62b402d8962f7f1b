#include "partsmamba/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace partsmamba {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(n);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return d;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt_double(double d) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, end);
}

struct Key {
  const char* name;
  bool model;
  std::function<std::string(const RunSettings&)> get;
  std::function<void(RunSettings&, const std::string&)> set;
};

#define SIZE_KEY(section, field, model)                                                         \
  Key {                                                                                         \
    #field, model, [](const RunSettings& s) { return std::to_string(s.section.field); },       \
        [](RunSettings& s, const std::string& v) { s.section.field = to_size(#field, v); }     \
  }
#define BOOL_KEY(section, field, model)                                                         \
  Key {                                                                                         \
    #field, model, [](const RunSettings& s) { return std::string(s.section.field ? "true" : "false"); }, \
        [](RunSettings& s, const std::string& v) { s.section.field = to_bool(#field, v); }     \
  }
#define DOUBLE_KEY(section, field)                                                              \
  Key {                                                                                         \
    #field, false, [](const RunSettings& s) { return fmt_double(s.train.field); },             \
        [](RunSettings& s, const std::string& v) { s.train.field = to_double(#field, v); }     \
  }
#define STRING_KEY(field)                                                                       \
  Key {                                                                                         \
    #field, true, [](const RunSettings& s) { return s.model.field; },                          \
        [](RunSettings& s, const std::string& v) { s.model.field = v; }                        \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      SIZE_KEY(model, joints, true),
      SIZE_KEY(model, window, true),
      SIZE_KEY(model, channels, true),
      SIZE_KEY(model, inner_channels, true),
      SIZE_KEY(model, state_size, true),
      SIZE_KEY(model, blocks, true),
      SIZE_KEY(model, sections, true),
      SIZE_KEY(model, num_classes, true),
      SIZE_KEY(model, scan_chunk, true),
      STRING_KEY(partition),
      STRING_KEY(adjacency),
      STRING_KEY(occlusion_table),
      Key{"seed", true, [](const RunSettings& s) { return std::to_string(s.model.seed); },
          [](RunSettings& s, const std::string& v) { s.model.seed = to_size("seed", v); }},
      Key{"dtype", true, [](const RunSettings& s) { return dtype_name(s.model.dtype); },
          [](RunSettings& s, const std::string& v) { s.model.dtype = parse_dtype(v); }},
      BOOL_KEY(model, tie_gate_projection, true),
      BOOL_KEY(model, tie_direction_weights, true),
      Key{"section_grouping", true,
          [](const RunSettings& s) {
            return std::string(s.model.grouping == SectionGrouping::Parts ? "parts"
                                                                           : "contiguous");
          },
          [](RunSettings& s, const std::string& v) {
            if (v == "contiguous") {
              s.model.grouping = SectionGrouping::Contiguous;
            } else if (v == "parts") {
              s.model.grouping = SectionGrouping::Parts;
            } else {
              throw ConfigError("config key 'section_grouping': expected contiguous or parts");
            }
          }},
      SIZE_KEY(train, epochs_gcn, false),
      SIZE_KEY(train, epochs_hybrid, false),
      SIZE_KEY(train, batch_size, false),
      Key{"optimizer", false,
          [](const RunSettings& s) {
            return std::string(s.train.optimizer == Optimizer::Adam ? "adam" : "sgd");
          },
          [](RunSettings& s, const std::string& v) {
            if (v == "adam") {
              s.train.optimizer = Optimizer::Adam;
            } else if (v == "sgd") {
              s.train.optimizer = Optimizer::Sgd;
            } else {
              throw ConfigError("config key 'optimizer': expected adam or sgd");
            }
          }},
      DOUBLE_KEY(train, learning_rate),
      DOUBLE_KEY(train, momentum),
      DOUBLE_KEY(train, stop_accuracy),
      SIZE_KEY(train, threads, false),
      BOOL_KEY(train, record_time, false),
  };
  return k;
}

#undef SIZE_KEY
#undef BOOL_KEY
#undef DOUBLE_KEY
#undef STRING_KEY

const Key& find_key(const std::string& name) {
  for (const auto& k : keys()) {
    if (name == k.name) return k;
  }
  throw ConfigError("unknown config key '" + name + "'");
}

}  // namespace

std::string dtype_name(DType d) { return d == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  throw ConfigError("dtype must be f32 or f64, got '" + s + "'");
}

void ModelConfig::validate() const {
  if (joints == 0 || window == 0 || channels == 0 || state_size == 0 || num_classes < 2) {
    throw ConfigError("joints, window, channels and state_size must be positive and "
                      "num_classes at least 2");
  }
  if (inner() == 0 || inner() > channels) {
    throw ConfigError("inner_channels must lie in [1, channels]");
  }
  if (sections == 0 || joints % sections != 0) {
    throw ConfigError("sections (" + std::to_string(sections) + ") must divide joints (" +
                      std::to_string(joints) + ")");
  }
  if (scan_chunk == 0) throw ConfigError("scan_chunk must be at least 1");
}

RunSettings parse_settings(const std::string& text) {
  RunSettings s;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    find_key(trim(line.substr(0, eq))).set(s, trim(line.substr(eq + 1)));
  }
  s.model.validate();
  return s;
}

RunSettings load_settings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_settings(buf.str());
}

std::map<std::string, std::string> model_config_entries(const ModelConfig& c) {
  RunSettings s;
  s.model = c;
  std::map<std::string, std::string> out;
  for (const auto& k : keys()) {
    if (k.model) out.emplace(k.name, k.get(s));
  }
  return out;
}

ModelConfig model_config_from_entries(const std::map<std::string, std::string>& entries) {
  RunSettings s;
  for (const auto& [key, value] : entries) {
    const Key& k = find_key(key);
    if (!k.model) throw ConfigError("'" + key + "' is not a model configuration key");
    k.set(s, value);
  }
  s.model.validate();
  return s.model;
}

std::string settings_to_text(const RunSettings& s) {
  std::ostringstream os;
  for (const auto& k : keys()) os << k.name << " = " << k.get(s) << '\n';
  return os.str();
}

SkeletonSpec load_skeleton(const ModelConfig& c) {
  const bool builtin = c.joints == 25;
  auto need = [&](const std::string& path, const char* what) {
    if (path.empty() && !builtin) {
      throw ConfigError(std::string("no built-in ") + what + " for " + std::to_string(c.joints) +
                        " joints; set the '" + what + "' key");
    }
  };
  need(c.partition, "partition");
  need(c.adjacency, "adjacency");
  need(c.occlusion_table, "occlusion_table");
  return SkeletonSpec{
      c.partition.empty() ? PartPartition::ntu25() : PartPartition::load(c.partition, c.joints),
      c.adjacency.empty() ? SkeletonGraph::ntu25() : SkeletonGraph::load(c.adjacency, c.joints),
      c.occlusion_table.empty() ? OcclusionTable::ntu25()
                                : OcclusionTable::load(c.occlusion_table, c.joints)};
}

}  // namespace partsmamba
