#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "betagnn/attacks.hpp"
#include "betagnn/autodiff.hpp"
#include "betagnn/ensemble.hpp"
#include "betagnn/error.hpp"
#include "betagnn/graph.hpp"

namespace betagnn {

namespace fs = std::filesystem;

/// Writes through a sibling temp file and renames it into place.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// "%.17g", enough digits to round-trip a double.
inline std::string format_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

/// Calls fn(line_number, line) for every line that is neither blank nor a
/// '#' comment.
template <class Fn>
void for_each_data_line(const std::string& text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    ++line_no;
    std::string_view line = trim(std::string_view(text).substr(pos, nl - pos));
    if (!line.empty() && line.front() != '#') fn(line_no, line);
    pos = nl + 1;
  }
}

[[noreturn]] inline void parse_fail(const fs::path& file, std::size_t line, const std::string& what) {
  throw ParseError(file.filename().string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace detail

struct Manifest {
  std::string name;
  std::size_t n_nodes = 0;
  std::size_t n_features = 0;
  int n_classes = 0;
};

struct Dataset {
  SparseGraph graph;
  FeatureMatrix features;
  LabelVector labels;
  Manifest manifest;
};

/// Reads edges.txt, features.csv, labels.txt and meta.json from `dir`.
inline Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  const fs::path meta_path = dir / "meta.json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path));
    ds.manifest.name = meta.at("name").get<std::string>();
    ds.manifest.n_nodes = meta.at("n_nodes").get<std::size_t>();
    ds.manifest.n_features = meta.at("n_features").get<std::size_t>();
    ds.manifest.n_classes = meta.at("n_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("meta.json: " + std::string(e.what()));
  }
  const std::size_t n = ds.manifest.n_nodes;

  const fs::path edges_path = dir / "edges.txt";
  std::vector<std::tuple<NodeId, NodeId, Real>> edges;
  std::set<Edge> seen;
  detail::for_each_data_line(read_file(edges_path), [&](std::size_t ln, std::string_view line) {
    auto tok = detail::split_ws(line);
    NodeId u = 0;
    NodeId v = 0;
    double w = 1.0;
    if ((tok.size() != 2 && tok.size() != 3) || !detail::parse_number(tok[0], u) || !detail::parse_number(tok[1], v)) {
      detail::parse_fail(edges_path, ln, "expected 'u v' or 'u v w'");
    }
    if (tok.size() == 3) {
      if (!detail::parse_number(tok[2], w) || !std::isfinite(w) || w <= 0.0) {
        detail::parse_fail(edges_path, ln, "edge weight must be a positive real");
      }
    }
    if (u == v) detail::parse_fail(edges_path, ln, "self-loop on node " + std::to_string(u));
    if (u > v) detail::parse_fail(edges_path, ln, "expected u < v");
    if (v >= n) detail::parse_fail(edges_path, ln, "node id " + std::to_string(v) + " >= n_nodes " + std::to_string(n));
    if (!seen.insert({u, v}).second) detail::parse_fail(edges_path, ln, "duplicate edge");
    edges.emplace_back(u, v, w);
  });
  ds.graph = SparseGraph::from_weighted_edges(n, edges);

  const fs::path feat_path = dir / "features.csv";
  std::vector<Real> values;
  std::size_t rows = 0;
  std::size_t d = 0;
  detail::for_each_data_line(read_file(feat_path), [&](std::size_t ln, std::string_view line) {
    std::size_t cols = 0;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      const std::string_view cell = line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos);
      double v = 0.0;
      if (!detail::parse_number(cell, v) || !std::isfinite(v)) {
        detail::parse_fail(feat_path, ln, "bad real '" + std::string(detail::trim(cell)) + "'");
      }
      values.push_back(v);
      ++cols;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (rows == 0) d = cols;
    if (cols != d) {
      detail::parse_fail(feat_path, ln, "expected " + std::to_string(d) + " columns, found " + std::to_string(cols));
    }
    ++rows;
  });

  const fs::path label_path = dir / "labels.txt";
  ds.labels.n_classes = ds.manifest.n_classes;
  detail::for_each_data_line(read_file(label_path), [&](std::size_t ln, std::string_view line) {
    int c = 0;
    if (!detail::parse_number(line, c)) detail::parse_fail(label_path, ln, "bad class id");
    if (c < 0 || c >= ds.manifest.n_classes) {
      detail::parse_fail(label_path, ln, "class id " + std::to_string(c) + " outside [0," +
                                             std::to_string(ds.manifest.n_classes) + ")");
    }
    ds.labels.ids.push_back(c);
  });

  std::ostringstream mismatch;
  if (rows != n) mismatch << " features.csv rows: expected " << n << ", found " << rows << ";";
  if (d != ds.manifest.n_features) {
    mismatch << " features.csv columns: expected " << ds.manifest.n_features << ", found " << d << ";";
  }
  if (ds.labels.size() != n) mismatch << " labels.txt lines: expected " << n << ", found " << ds.labels.size() << ";";
  if (meta.contains("n_edges") && meta["n_edges"].get<std::size_t>() != ds.graph.n_edges()) {
    mismatch << " edges.txt edges: expected " << meta["n_edges"].get<std::size_t>() << ", found "
             << ds.graph.n_edges() << ";";
  }
  if (!mismatch.str().empty()) throw ParseError("manifest mismatch:" + mismatch.str());
  ds.features = FeatureMatrix(Tensor(rows, d, std::move(values)));
  return ds;
}

inline void save_dataset(const Dataset& ds, const fs::path& dir) {
  const bool weighted = !ds.graph.is_unweighted();
  std::ostringstream e;
  for (const Edge& ed : ds.graph.edges()) {
    e << ed.u << ' ' << ed.v;
    if (weighted) e << ' ' << format_exact(ds.graph.weight(ed.u, ed.v));
    e << '\n';
  }
  std::ostringstream f;
  const Tensor& x = ds.features.values();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) f << (c ? "," : "") << format_exact(x(r, c));
    f << '\n';
  }
  std::ostringstream l;
  for (int c : ds.labels.ids) l << c << '\n';
  nlohmann::json meta = {{"name", ds.manifest.name},
                         {"n_nodes", ds.graph.n_nodes()},
                         {"n_features", ds.features.dim()},
                         {"n_classes", ds.labels.n_classes},
                         {"n_edges", ds.graph.n_edges()}};
  write_file_atomic(dir / "edges.txt", e.str());
  write_file_atomic(dir / "features.csv", f.str());
  write_file_atomic(dir / "labels.txt", l.str());
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

/// Header metadata of an edge diff file.
struct EdgeDiffHeader {
  std::string kind;
  std::uint64_t seed = 0;
  std::size_t budget = 0;
};

/// "# key=value" header lines, then "+ u v" / "- u v" sorted by pair.
inline std::string format_edge_diff(const EdgeDiff& d, const EdgeDiffHeader& h) {
  std::ostringstream os;
  os << "# betagnn edge diff v1\n";
  os << "# kind=" << h.kind << "\n# seed=" << h.seed << "\n# budget=" << h.budget << '\n';
  std::vector<std::pair<Edge, char>> lines;
  for (const Edge& e : d.added) lines.emplace_back(e, '+');
  for (const Edge& e : d.removed) lines.emplace_back(e, '-');
  std::sort(lines.begin(), lines.end());
  for (const auto& [e, sign] : lines) os << sign << ' ' << e.u << ' ' << e.v << '\n';
  return os.str();
}

inline void write_edge_diff(const fs::path& path, const EdgeDiff& d, const EdgeDiffHeader& h) {
  write_file_atomic(path, format_edge_diff(d, h));
}

inline std::pair<EdgeDiff, EdgeDiffHeader> read_edge_diff(const fs::path& path) {
  const std::string text = read_file(path);
  EdgeDiff d;
  EdgeDiffHeader h;
  std::size_t line_no = 0;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      line = detail::trim(line.substr(1));
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) continue;
      const std::string_view key = line.substr(0, eq);
      const std::string_view val = line.substr(eq + 1);
      if (key == "kind") h.kind = std::string(val);
      if (key == "seed" && !detail::parse_number(val, h.seed)) detail::parse_fail(path, line_no, "bad seed");
      if (key == "budget" && !detail::parse_number(val, h.budget)) detail::parse_fail(path, line_no, "bad budget");
      continue;
    }
    auto tok = detail::split_ws(line);
    NodeId u = 0;
    NodeId v = 0;
    if (tok.size() != 3 || (tok[0] != "+" && tok[0] != "-") || !detail::parse_number(tok[1], u) ||
        !detail::parse_number(tok[2], v)) {
      detail::parse_fail(path, line_no, "expected '+ u v' or '- u v'");
    }
    if (u >= v) detail::parse_fail(path, line_no, "expected u < v");
    auto& target = tok[0] == "+" ? d.added : d.removed;
    if (!target.insert({u, v}).second) detail::parse_fail(path, line_no, "duplicate pair");
  }
  return {std::move(d), std::move(h)};
}

/// epoch,beta,train_loss,val_acc with 6 fixed decimals; beta is empty for
/// models without one.
inline std::string format_trajectory_csv(const BetaTrajectory& traj) {
  std::ostringstream os;
  os << "epoch,beta,train_loss,val_acc\n";
  for (const EpochRecord& r : traj) {
    os << r.epoch << ',' << (r.beta ? format_fixed(*r.beta, 6) : "") << ',' << format_fixed(r.train_loss, 6) << ','
       << format_fixed(r.val_acc, 6) << '\n';
  }
  return os.str();
}

inline constexpr std::string_view kCheckpointHeader = "betagnn-checkpoint v1";

/// Text checkpoint: a header line, then per parameter "name rows cols" and
/// one line of row-major values.
inline std::string format_checkpoint(const ParamList& params) {
  std::ostringstream os;
  os << kCheckpointHeader << '\n';
  for (const Parameter* p : params) {
    os << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    for (std::size_t i = 0; i < p->value.size(); ++i) os << (i ? " " : "") << format_exact(p->value[i]);
    os << '\n';
  }
  return os.str();
}

inline void save_checkpoint(const fs::path& path, const ParamList& params) {
  write_file_atomic(path, format_checkpoint(params));
}

/// Loads values by name into `params`; every parameter must be present with
/// a matching shape.
inline void load_checkpoint(const fs::path& path, const ParamList& params) {
  std::istringstream in(read_file(path));
  std::string header;
  std::getline(in, header);
  if (detail::trim(header) != kCheckpointHeader) throw ParseError(path.string() + ": unsupported checkpoint header");
  std::map<std::string, Tensor> stored;
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  while (in >> name >> rows >> cols) {
    std::vector<Real> v(rows * cols);
    for (Real& x : v) {
      if (!(in >> x)) throw ParseError(path.string() + ": truncated values for " + name);
    }
    stored.emplace(name, Tensor(rows, cols, std::move(v)));
  }
  for (Parameter* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw ParseError(path.string() + ": missing parameter " + p->name);
    if (!it->second.same_shape(p->value)) {
      throw ShapeError(path.string() + ": parameter " + p->name + " has shape " + it->second.shape() +
                       ", model expects " + p->value.shape());
    }
    p->value = it->second;
  }
}

}  // namespace betagnn
