#include "gnn/io.hpp"

#include <fstream>
#include <iostream>
#include <json.hpp>

#include "gnn/errors.hpp"

namespace gnn {

using nlohmann::json;

namespace {

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"data", t.to_vector()}, {"dtype", to_string(t.precision())}};
}

json features_to_json(const FeatureMap& features) {
  json out = json::object();
  for (const auto& [name, t] : features) out[name] = tensor_to_json(t);
  return out;
}

// Field lookup that reports the dotted path of whatever is missing or mistyped.
class Reader {
 public:
  explicit Reader(std::string context) : context_(std::move(context)) {}

  [[noreturn]] void fail(const std::string& field, const std::string& why) const {
    throw ParseError(context_ + "field '" + field + "': " + why);
  }

  const json& member(const json& obj, const std::string& key, const std::string& path) const {
    if (!obj.is_object()) fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path.empty() ? key : path + "." + key, "missing");
    return *it;
  }

  std::size_t count(const json& v, const std::string& field) const {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) fail(field, "expected a non-negative integer");
    return v.get<std::size_t>();
  }

  std::vector<Index> indices(const json& v, const std::string& field) const {
    if (!v.is_array()) fail(field, "expected an array of integers");
    std::vector<Index> out;
    out.reserve(v.size());
    for (const auto& e : v) {
      if (!e.is_number_integer()) fail(field, "expected an array of integers");
      out.push_back(e.get<Index>());
    }
    return out;
  }

  std::vector<double> reals(const json& v, const std::string& field) const {
    if (!v.is_array()) fail(field, "expected an array of numbers");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& e : v) {
      if (!e.is_number()) fail(field, "expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  Tensor tensor(const json& v, const std::string& field, Precision fallback) const {
    if (!v.is_object()) fail(field, "expected an object with shape and data");
    Shape shape;
    const json& js = member(v, "shape", field);
    if (!js.is_array()) fail(field + ".shape", "expected an array of extents");
    for (const auto& e : js) shape.push_back(count(e, field + ".shape"));
    std::vector<double> data = reals(member(v, "data", field), field + ".data");
    if (data.size() != shape_numel(shape)) {
      fail(field + ".data", "has " + std::to_string(data.size()) + " values, shape " + shape_string(shape) +
                                " needs " + std::to_string(shape_numel(shape)));
    }
    Precision p = fallback;
    if (auto it = v.find("dtype"); it != v.end()) {
      if (*it == "f32") {
        p = Precision::f32;
      } else if (*it == "f64") {
        p = Precision::f64;
      } else {
        fail(field + ".dtype", "expected \"f32\" or \"f64\"");
      }
    }
    return Tensor(std::move(shape), std::move(data), p);
  }

  FeatureMap features(const json& obj, const std::string& key) const {
    FeatureMap out;
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return out;
    if (!it->is_object()) fail(key, "expected an object of named tensors");
    for (const auto& [name, v] : it->items()) out.emplace(name, tensor(v, key + "." + name, Precision::f32));
    return out;
  }

 private:
  std::string context_;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ResourceError("cannot open '" + path + "' for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open '" + path + "' for reading");
  return in;
}

}  // namespace

void write_dataset(std::ostream& out, std::span<const GNNGraph> graphs) {
  for (const GNNGraph& g : graphs) {
    if (g.num_graphs() != 1) throw ContractError("write_dataset expects unbatched graphs");
    json j;
    j["num_nodes"] = g.num_nodes();
    j["sources"] = std::vector<Index>(g.sources().begin(), g.sources().end());
    j["targets"] = std::vector<Index>(g.targets().begin(), g.targets().end());
    j["edge_weight"] = g.has_edge_weight() ? json(std::vector<double>(g.edge_weight().begin(), g.edge_weight().end()))
                                           : json(nullptr);
    j["ndata"] = features_to_json(g.ndata());
    j["edata"] = features_to_json(g.edata());
    j["gdata"] = features_to_json(g.gdata());
    out << j.dump() << '\n';
  }
  if (!out) throw ResourceError("write_dataset: stream write failed");
}

std::vector<GNNGraph> read_dataset(std::istream& in) {
  std::vector<GNNGraph> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + "malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw ParseError(where + "expected a JSON object");
    const Reader r(where);
    const std::size_t n = r.count(r.member(j, "num_nodes", ""), "num_nodes");
    auto sources = r.indices(r.member(j, "sources", ""), "sources");
    auto targets = r.indices(r.member(j, "targets", ""), "targets");
    std::optional<std::vector<double>> weights;
    if (auto it = j.find("edge_weight"); it != j.end() && !it->is_null()) weights = r.reals(*it, "edge_weight");
    FeatureMap ndata = r.features(j, "ndata"), edata = r.features(j, "edata"), gdata = r.features(j, "gdata");
    try {
      out.push_back(GNNGraph::from_coo(std::move(sources), std::move(targets), n, std::move(ndata), std::move(edata),
                                       std::move(gdata), std::move(weights)));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ValidationError(where + e.what());
    }
  }
  return out;
}

void save_dataset(const std::string& path, std::span<const GNNGraph> graphs) {
  auto out = open_out(path);
  write_dataset(out, graphs);
}

std::vector<GNNGraph> load_dataset(const std::string& path) {
  auto in = open_in(path);
  return read_dataset(in);
}

void write_checkpoint(std::ostream& out, const std::map<std::string, Tensor>& params) {
  json p = json::object();
  for (const auto& [name, t] : params) p[name] = tensor_to_json(t);
  out << json{{"format_version", kCheckpointFormatVersion}, {"params", p}}.dump(1) << '\n';
  if (!out) throw ResourceError("write_checkpoint: stream write failed");
}

std::map<std::string, Tensor> read_checkpoint(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint: malformed JSON (") + e.what() + ")");
  }
  const Reader r("checkpoint: ");
  const json& version = r.member(j, "format_version", "");
  if (!version.is_number_integer()) r.fail("format_version", "expected an integer");
  if (version.get<std::int64_t>() != kCheckpointFormatVersion) {
    throw ValidationError("checkpoint: unsupported format_version " + version.dump());
  }
  const json& params = r.member(j, "params", "");
  if (!params.is_object()) r.fail("params", "expected an object of named tensors");
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : params.items()) out.emplace(name, r.tensor(v, "params." + name, Precision::f64));
  return out;
}

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& params) {
  auto out = open_out(path);
  write_checkpoint(out, params);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  auto in = open_in(path);
  return read_checkpoint(in);
}

}  // namespace gnn
