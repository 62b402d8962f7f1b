#include "partsmamba/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace partsmamba {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in native order");

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_shape_token(const std::string& tok) {
  Shape s;
  std::istringstream in(tok);
  std::string part;
  while (std::getline(in, part, 'x')) s.push_back(std::stoull(part));
  return s;
}

std::string expect_line(std::istream& in, std::size_t& lineno) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("checkpoint manifest ends early", lineno + 1);
  ++lineno;
  return line;
}

std::size_t expect_count(std::istream& in, std::size_t& lineno, const std::string& keyword) {
  const std::string line = expect_line(in, lineno);
  std::istringstream ls(line);
  std::string word;
  long long n = -1;
  if (!(ls >> word >> n) || word != keyword || n < 0) {
    throw ParseError("expected '" + keyword + " <count>'", lineno);
  }
  return static_cast<std::size_t>(n);
}

}  // namespace

void write_checkpoint(std::ostream& out, const Model& model, const std::string& stage) {
  const auto entries = model_config_entries(model.config());
  const auto& parts = model.partition().parts();
  const auto& edges = model.graph().edges();
  const ParamStore& ps = model.params();
  const DType dtype = model.config().dtype;

  out << "partsmamba-checkpoint " << kCheckpointVersion << '\n';
  out << "stage " << stage << '\n';
  out << "config " << entries.size() << '\n';
  for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
  out << "partition " << parts.size() << '\n' << model.partition().to_text();
  out << "edges " << edges.size() << '\n' << model.graph().to_text();
  out << "params " << ps.size() << '\n';
  for (std::size_t i = 0; i < ps.size(); ++i) {
    out << ps[i].name << ' ' << dtype_name(dtype) << ' ' << shape_token(ps[i].value.shape())
        << '\n';
  }
  out << "payload\n";
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (double v : ps[i].value.data()) {
      if (dtype == DType::F32) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
      } else {
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
    }
  }
  if (!out) throw std::runtime_error("checkpoint write failed");
}

LoadedCheckpoint read_checkpoint(std::istream& in) {
  std::size_t lineno = 0;
  {
    std::istringstream ls(expect_line(in, lineno));
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != "partsmamba-checkpoint") {
      throw ParseError("not a partsmamba checkpoint", lineno);
    }
    if (version != kCheckpointVersion) {
      throw ParseError("unsupported checkpoint version " + std::to_string(version), lineno);
    }
  }
  std::string stage;
  {
    std::istringstream ls(expect_line(in, lineno));
    std::string word;
    if (!(ls >> word >> stage) || word != "stage") throw ParseError("expected 'stage <tag>'", lineno);
  }

  std::map<std::string, std::string> entries;
  const std::size_t n_config = expect_count(in, lineno, "config");
  for (std::size_t i = 0; i < n_config; ++i) {
    const std::string line = expect_line(in, lineno);
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ParseError("expected '<key> = <value>'", lineno);
    entries[line.substr(0, eq)] = line.substr(eq + 3);
  }
  ModelConfig config = model_config_from_entries(entries);

  std::string table;
  const std::size_t n_parts = expect_count(in, lineno, "partition");
  for (std::size_t i = 0; i < n_parts; ++i) table += expect_line(in, lineno) + '\n';
  std::istringstream parts_in(table);
  PartPartition partition = PartPartition::parse(parts_in, config.joints);

  table.clear();
  const std::size_t n_edges = expect_count(in, lineno, "edges");
  for (std::size_t i = 0; i < n_edges; ++i) table += expect_line(in, lineno) + '\n';
  std::istringstream edges_in(table);
  SkeletonGraph graph = SkeletonGraph::parse(edges_in, config.joints);

  struct Entry {
    std::string name;
    DType dtype;
    Shape shape;
  };
  std::vector<Entry> manifest;
  const std::size_t n_params = expect_count(in, lineno, "params");
  for (std::size_t i = 0; i < n_params; ++i) {
    std::istringstream ls(expect_line(in, lineno));
    std::string name, dt, shape;
    if (!(ls >> name >> dt >> shape)) throw ParseError("expected '<name> <dtype> <shape>'", lineno);
    try {
      manifest.push_back({name, parse_dtype(dt), parse_shape_token(shape)});
    } catch (const std::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  if (expect_line(in, lineno) != "payload") throw ParseError("expected 'payload'", lineno);

  Model model(config, std::move(partition), std::move(graph));
  ParamStore& ps = model.params();
  if (manifest.size() != ps.size()) {
    throw std::runtime_error("checkpoint lists " + std::to_string(manifest.size()) +
                             " parameters, model declares " + std::to_string(ps.size()));
  }
  for (const auto& e : manifest) {
    if (!ps.contains(e.name)) throw std::runtime_error("checkpoint parameter '" + e.name + "' is unknown");
    Param& p = ps.get(e.name);
    require_shape(p.value, e.shape, e.name.c_str());
    for (auto& v : p.value.data()) {
      if (e.dtype == DType::F32) {
        float f = 0.0f;
        in.read(reinterpret_cast<char*>(&f), sizeof f);
        v = static_cast<double>(f);
      } else {
        in.read(reinterpret_cast<char*>(&v), sizeof v);
      }
    }
    if (!in) throw std::runtime_error("checkpoint payload truncated at '" + e.name + "'");
  }
  return LoadedCheckpoint{std::move(model), stage};
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& stage) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(out, model, stage);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace partsmamba
