#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gnn/graph.hpp"
#include "gnn/tensor.hpp"

namespace gnn {

// Graph datasets are JSON Lines, one graph per line:
//   {"num_nodes": n, "sources": [...], "targets": [...], "edge_weight": [...] | null,
//    "ndata": {"x": {"shape": [d, n], "data": [...], "dtype": "f32"}}, "edata": {...}, "gdata": {...}}
// "dtype" is optional on input and defaults to f32. Blank lines are skipped.
// Malformed JSON or fields raise ParseError, graphs that break an invariant
// raise ValidationError; both messages start with "line N:".
void write_dataset(std::ostream& out, std::span<const GNNGraph> graphs);
std::vector<GNNGraph> read_dataset(std::istream& in);
void save_dataset(const std::string& path, std::span<const GNNGraph> graphs);
std::vector<GNNGraph> load_dataset(const std::string& path);

// Checkpoints are one JSON object:
//   {"format_version": 1, "params": {"0.weight": {"shape": [...], "data": [...], "dtype": "f32"}, ...}}
// "dtype" is optional on input and defaults to f64. Values are written with
// enough digits to round-trip exactly.
inline constexpr int kCheckpointFormatVersion = 1;

void write_checkpoint(std::ostream& out, const std::map<std::string, Tensor>& params);
std::map<std::string, Tensor> read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& params);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace gnn
