#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <variant>
#include <vector>

#include "betagnn/attacks.hpp"
#include "betagnn/defenses.hpp"
#include "betagnn/ensemble.hpp"
#include "betagnn/error.hpp"
#include "betagnn/graph.hpp"
#include "betagnn/io.hpp"
#include "betagnn/rng.hpp"
#include "betagnn/sbm.hpp"

namespace betagnn {

enum class ModelKind { Mlp, Gcn, Gpr, BetaGcn, BetaGpr };

inline std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Gcn: return "gcn";
    case ModelKind::Gpr: return "gpr";
    case ModelKind::BetaGcn: return "beta-gcn";
    case ModelKind::BetaGpr: return "beta-gpr";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "mlp") return ModelKind::Mlp;
  if (s == "gcn") return ModelKind::Gcn;
  if (s == "gpr") return ModelKind::Gpr;
  if (s == "beta-gcn") return ModelKind::BetaGcn;
  if (s == "beta-gpr") return ModelKind::BetaGpr;
  throw Error("unknown model '" + std::string(s) + "' (expected mlp|gcn|gpr|beta-gcn|beta-gpr)");
}

enum class DefenseKind { None, Jaccard, Svd };

inline std::string to_string(DefenseKind d) {
  switch (d) {
    case DefenseKind::None: return "none";
    case DefenseKind::Jaccard: return "jaccard";
    case DefenseKind::Svd: return "svd";
  }
  return "?";
}

inline DefenseKind parse_defense_kind(std::string_view s) {
  if (s == "none") return DefenseKind::None;
  if (s == "jaccard") return DefenseKind::Jaccard;
  if (s == "svd") return DefenseKind::Svd;
  throw Error("unknown defense '" + std::string(s) + "' (expected none|jaccard|svd)");
}

inline std::string to_string(AttackObjective o) {
  return o == AttackObjective::TrainLoss ? "train-loss" : "self-training";
}

inline AttackObjective parse_attack_objective(std::string_view s) {
  if (s == "train-loss") return AttackObjective::TrainLoss;
  if (s == "self-training") return AttackObjective::SelfTraining;
  throw Error("unknown attack objective '" + std::string(s) + "' (expected train-loss|self-training)");
}

struct DefenseSpec {
  DefenseKind kind = DefenseKind::None;
  double tau = 0.01;
  std::size_t rank = 15;
  std::size_t iters = 4;
};

/// Either a dataset directory or SBM generator parameters.
using DatasetSource = std::variant<std::filesystem::path, SbmParams>;

struct ExperimentConfig {
  DatasetSource dataset = SbmParams{};
  std::vector<ModelKind> models{ModelKind::BetaGcn};
  std::size_t hidden = 64;
  std::size_t gpr_hops = 4;

  std::optional<AttackKind> attack;
  /// Edge budget as a fraction of |E|; ignored when budget_edges is set.
  double budget_ratio = 0.0;
  std::optional<std::size_t> budget_edges;
  std::size_t n_targets = 10;
  int surrogate_epochs = 100;
  AttackObjective objective = AttackObjective::TrainLoss;

  DefenseSpec defense;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t n_seeds = 1;
  std::filesystem::path out = "results";
  std::size_t threads = 1;

  void validate() const {
    if (n_seeds < 1) throw Error("config: n_seeds must be >= 1");
    if (models.empty()) throw Error("config: models must list at least one model");
    if (hidden < 1) throw Error("config: hidden must be >= 1");
    if (gpr_hops < 1) throw Error("config: gpr.hops must be >= 1");
    if (!(budget_ratio >= 0.0)) throw Error("config: attack.budget_ratio must be >= 0");
    if (attack == AttackKind::GreedyTargeted && n_targets < 1) throw Error("config: attack.targets must be >= 1");
    if (surrogate_epochs < 1) throw Error("config: attack.surrogate_epochs must be >= 1");
    if (!(defense.tau >= 0.0 && defense.tau <= 1.0)) throw Error("config: defense.tau must be in [0,1]");
    if (defense.rank < 1) throw Error("config: defense.rank must be >= 1");
    if (defense.iters < 2) throw Error("config: defense.iters must be >= 2");
    if (threads < 1) throw Error("config: threads must be >= 1");
    train.validate();
  }

  /// Edge budget for a graph with `n_edges` edges; per target for the
  /// targeted attack.
  std::size_t resolve_budget(std::size_t n_edges) const {
    if (budget_edges) return *budget_edges;
    return static_cast<std::size_t>(std::llround(budget_ratio * static_cast<double>(n_edges)));
  }
};

namespace detail {

template <class T>
T parse_config_value(std::string_view key, std::string_view val, std::size_t line) {
  T out{};
  if (!parse_number(val, out)) {
    throw ParseError("config:" + std::to_string(line) + ": bad value '" + std::string(val) + "' for " +
                     std::string(key));
  }
  return out;
}

inline std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t c = std::min(s.find(',', pos), s.size());
    if (auto item = trim(s.substr(pos, c - pos)); !item.empty()) out.push_back(item);
    pos = c + 1;
  }
  return out;
}

}  // namespace detail

/// Flat `key = value` text, one per line, '#' starts a comment line.
/// Unknown keys, repeated keys and malformed values are errors. Keys:
///
///   dataset              sbm | <directory>
///   sbm.n sbm.classes sbm.p_in sbm.p_out sbm.feature_dim sbm.feature_noise sbm.seed
///   models               comma list of mlp, gcn, gpr, beta-gcn, beta-gpr
///   hidden gpr.hops
///   attack               none | random | heterophily-inject | grad-untargeted | greedy-targeted
///   attack.budget_ratio attack.budget attack.targets attack.surrogate_epochs
///   attack.objective     train-loss | self-training
///   defense              none | jaccard | svd
///   defense.tau defense.rank defense.iters
///   train.epochs train.lr train.clip train.dropout train.weight_decay
///   seed n_seeds out threads
inline ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig cfg;
  SbmParams sbm;
  bool use_sbm = true;
  bool sbm_key_seen = false;
  std::set<std::string, std::less<>> seen;
  detail::for_each_data_line(text, [&](std::size_t ln, std::string_view line) {
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError("config:" + std::to_string(ln) + ": expected 'key = value'");
    }
    const std::string_view key = detail::trim(line.substr(0, eq));
    const std::string_view val = detail::trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) {
      throw ParseError("config:" + std::to_string(ln) + ": duplicate key '" + std::string(key) + "'");
    }
    auto num = [&]<class T>(T& dst) { dst = detail::parse_config_value<T>(key, val, ln); };
    try {
      if (key.starts_with("sbm.")) sbm_key_seen = true;
      if (key == "dataset") {
        use_sbm = val == "sbm";
        if (!use_sbm) cfg.dataset = std::filesystem::path(std::string(val));
      } else if (key == "sbm.n") {
        num(sbm.n);
      } else if (key == "sbm.classes") {
        num(sbm.n_classes);
      } else if (key == "sbm.p_in") {
        num(sbm.p_in);
      } else if (key == "sbm.p_out") {
        num(sbm.p_out);
      } else if (key == "sbm.feature_dim") {
        num(sbm.feature_dim);
      } else if (key == "sbm.feature_noise") {
        num(sbm.feature_noise);
      } else if (key == "sbm.seed") {
        num(sbm.seed);
      } else if (key == "models") {
        cfg.models.clear();
        for (auto m : detail::split_list(val)) cfg.models.push_back(parse_model_kind(m));
      } else if (key == "hidden") {
        num(cfg.hidden);
      } else if (key == "gpr.hops") {
        num(cfg.gpr_hops);
      } else if (key == "attack") {
        cfg.attack = val == "none" ? std::nullopt : std::optional(parse_attack_kind(std::string(val)));
      } else if (key == "attack.budget_ratio") {
        num(cfg.budget_ratio);
      } else if (key == "attack.budget") {
        std::size_t b = 0;
        num(b);
        cfg.budget_edges = b;
      } else if (key == "attack.targets") {
        num(cfg.n_targets);
      } else if (key == "attack.surrogate_epochs") {
        num(cfg.surrogate_epochs);
      } else if (key == "attack.objective") {
        cfg.objective = parse_attack_objective(val);
      } else if (key == "defense") {
        cfg.defense.kind = parse_defense_kind(val);
      } else if (key == "defense.tau") {
        num(cfg.defense.tau);
      } else if (key == "defense.rank") {
        num(cfg.defense.rank);
      } else if (key == "defense.iters") {
        num(cfg.defense.iters);
      } else if (key == "train.epochs") {
        num(cfg.train.epochs);
      } else if (key == "train.lr") {
        num(cfg.train.lr);
      } else if (key == "train.clip") {
        num(cfg.train.clip_max_norm);
      } else if (key == "train.dropout") {
        num(cfg.train.dropout);
      } else if (key == "train.weight_decay") {
        num(cfg.train.weight_decay);
      } else if (key == "seed") {
        num(cfg.seed);
      } else if (key == "n_seeds") {
        num(cfg.n_seeds);
      } else if (key == "out") {
        cfg.out = std::string(val);
      } else if (key == "threads") {
        num(cfg.threads);
      } else {
        throw ParseError("config:" + std::to_string(ln) + ": unknown key '" + std::string(key) + "'");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError("config:" + std::to_string(ln) + ": " + e.what());
    }
  });
  if (use_sbm) {
    cfg.dataset = sbm;
  } else if (sbm_key_seen) {
    throw ParseError("config: sbm.* keys given but dataset is a directory");
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  try {
    return parse_experiment_config(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Canonical text form; parsing it yields the same configuration.
inline std::string format_experiment_config(const ExperimentConfig& c) {
  std::ostringstream os;
  if (const auto* dir = std::get_if<std::filesystem::path>(&c.dataset)) {
    os << "dataset = " << dir->string() << '\n';
  } else {
    const auto& s = std::get<SbmParams>(c.dataset);
    os << "dataset = sbm\n"
       << "sbm.n = " << s.n << "\nsbm.classes = " << s.n_classes << "\nsbm.p_in = " << format_exact(s.p_in)
       << "\nsbm.p_out = " << format_exact(s.p_out) << "\nsbm.feature_dim = " << s.feature_dim
       << "\nsbm.feature_noise = " << format_exact(s.feature_noise) << "\nsbm.seed = " << s.seed << '\n';
  }
  os << "models = ";
  for (std::size_t i = 0; i < c.models.size(); ++i) os << (i ? "," : "") << to_string(c.models[i]);
  os << "\nhidden = " << c.hidden << "\ngpr.hops = " << c.gpr_hops << '\n';
  os << "attack = " << (c.attack ? to_string(*c.attack) : "none") << '\n';
  if (c.budget_edges) {
    os << "attack.budget = " << *c.budget_edges << '\n';
  } else {
    os << "attack.budget_ratio = " << format_exact(c.budget_ratio) << '\n';
  }
  os << "attack.targets = " << c.n_targets << "\nattack.surrogate_epochs = " << c.surrogate_epochs
     << "\nattack.objective = " << to_string(c.objective) << '\n';
  os << "defense = " << to_string(c.defense.kind) << "\ndefense.tau = " << format_exact(c.defense.tau)
     << "\ndefense.rank = " << c.defense.rank << "\ndefense.iters = " << c.defense.iters << '\n';
  os << "train.epochs = " << c.train.epochs << "\ntrain.lr = " << format_exact(c.train.lr)
     << "\ntrain.clip = " << format_exact(c.train.clip_max_norm) << "\ntrain.dropout = " << format_exact(c.train.dropout)
     << "\ntrain.weight_decay = " << format_exact(c.train.weight_decay) << '\n';
  os << "seed = " << c.seed << "\nn_seeds = " << c.n_seeds << "\nout = " << c.out.string() << "\nthreads = " << c.threads
     << '\n';
  return os.str();
}

inline Dataset materialize_dataset(const DatasetSource& src) {
  if (const auto* dir = std::get_if<std::filesystem::path>(&src)) return load_dataset(*dir);
  return generate_sbm(std::get<SbmParams>(src));
}

/// Sub-seed tags under the per-seed seed derive_seed(cfg.seed, index).
namespace seed_tag {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kAttack = 2;
inline constexpr std::uint64_t kTargets = 3;
inline constexpr std::uint64_t kDefense = 4;
inline constexpr std::uint64_t kModel = 5;
inline constexpr std::uint64_t kTrain = 6;
}  // namespace seed_tag

struct ModelRun {
  ModelKind model = ModelKind::Gcn;
  TrainResult result;
};

/// Outcome of one seed: either every model trained, or `error` is set.
struct SeedRun {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::optional<std::string> error;
  std::size_t budget = 0;
  EdgeDiff diff;
  std::vector<ModelRun> runs;
};

/// Victim training for one model kind on an already perturbed graph.
inline TrainResult train_model(ModelKind kind, const ExperimentConfig& cfg, const SparseGraph& g, const Dataset& ds,
                               const DataSplit& split, std::uint64_t model_seed, std::uint64_t train_seed) {
  const std::size_t d = ds.features.dim();
  const auto c = static_cast<std::size_t>(ds.labels.n_classes);
  const double p = cfg.train.dropout;
  TrainConfig tc = cfg.train;
  tc.seed = train_seed;
  switch (kind) {
    case ModelKind::Mlp: {
      auto m = make_mlp(d, cfg.hidden, c, p, model_seed);
      return train(m, g, ds.features, ds.labels, split, tc);
    }
    case ModelKind::Gcn: {
      auto m = make_gcn(d, cfg.hidden, c, p, model_seed);
      return train(m, g, ds.features, ds.labels, split, tc);
    }
    case ModelKind::Gpr: {
      auto m = make_gpr(d, cfg.hidden, c, p, model_seed, cfg.gpr_hops);
      return train(m, g, ds.features, ds.labels, split, tc);
    }
    case ModelKind::BetaGcn: {
      auto m = make_beta_gcn(d, cfg.hidden, c, p, model_seed);
      return train(m, g, ds.features, ds.labels, split, tc);
    }
    case ModelKind::BetaGpr: {
      auto m = make_beta_gpr(d, cfg.hidden, c, p, model_seed, cfg.gpr_hops);
      return train(m, g, ds.features, ds.labels, split, tc);
    }
  }
  throw Error("unknown model kind");
}

/// Picks `count` test nodes as attack targets; they become the whole test
/// mask.
inline std::vector<NodeId> pick_targets(DataSplit& split, std::size_t count, std::uint64_t seed) {
  std::vector<NodeId> pool;
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    if (split.test[i]) pool.push_back(static_cast<NodeId>(i));
  }
  if (pool.size() < count) {
    throw Error("need " + std::to_string(count) + " targets but the test set has " + std::to_string(pool.size()) +
                " nodes");
  }
  Rng rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  std::fill(split.test.begin(), split.test.end(), 0);
  for (NodeId t : pool) split.test[t] = 1;
  return pool;
}

/// Attack, then defense, then training for every configured model.
/// Poisoned inputs are fixed before any victim model exists.
inline SeedRun run_seed(const ExperimentConfig& cfg, const Dataset& ds, std::size_t index) {
  SeedRun run;
  run.index = index;
  run.seed = derive_seed(cfg.seed, index);
  try {
    DataSplit split = make_split(ds.graph.n_nodes(), derive_seed(run.seed, seed_tag::kSplit));
    SparseGraph g = ds.graph;
    if (cfg.attack) {
      AttackSpec spec;
      spec.kind = *cfg.attack;
      spec.seed = derive_seed(run.seed, seed_tag::kAttack);
      spec.surrogate.epochs = cfg.surrogate_epochs;
      spec.objective = cfg.objective;
      run.budget = cfg.resolve_budget(ds.graph.n_edges());
      spec.budget.b_edges = run.budget;
      if (spec.kind == AttackKind::GreedyTargeted) {
        spec.targets = pick_targets(split, cfg.n_targets, derive_seed(run.seed, seed_tag::kTargets));
        for (NodeId t : spec.targets) {
          if (ds.labels[t] < 0 || ds.labels[t] >= ds.labels.n_classes) {
            throw Error("target node " + std::to_string(t) + " is unlabeled");
          }
        }
      }
      run.diff = run_attack(ds.graph, ds.features, ds.labels, split, spec).diff;
      g = apply_edge_diff(ds.graph, run.diff);
    }
    switch (cfg.defense.kind) {
      case DefenseKind::None: break;
      case DefenseKind::Jaccard: g = jaccard_prune(g, ds.features, cfg.defense.tau); break;
      case DefenseKind::Svd:
        g = truncated_svd_clean(g, std::min(cfg.defense.rank, g.n_nodes()), cfg.defense.iters,
                                derive_seed(run.seed, seed_tag::kDefense));
        break;
    }
    for (ModelKind m : cfg.models) {
      run.runs.push_back({m, train_model(m, cfg, g, ds, split, derive_seed(run.seed, seed_tag::kModel),
                                         derive_seed(run.seed, seed_tag::kTrain))});
    }
  } catch (const std::exception& e) {
    run.error = e.what();
    run.runs.clear();
  }
  return run;
}

/// One row of runs.csv.
struct RunRecord {
  std::string dataset;
  std::string attack;
  std::size_t budget = 0;
  std::string defense;
  std::string model;
  std::size_t seed_index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double test_acc = 0.0;
  std::optional<double> final_beta;
  std::string error;
};

/// Aggregate over the successful seeds of one (dataset, attack, budget,
/// defense, model) group.
struct RunSummary {
  std::string dataset;
  std::string attack;
  std::size_t budget = 0;
  std::string defense;
  std::string model;
  std::vector<double> accuracies;
  std::vector<double> final_betas;
  std::size_t n_failed = 0;
  /// Distinct failure reasons, in seed order.
  std::vector<std::string> errors;
  double mean = 0.0;
  /// Sample standard deviation; 0 for a single seed.
  double stddev = 0.0;
  std::optional<double> mean_beta;
};

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Groups records and sorts groups by (dataset, attack, budget, defense,
/// model); seeds within a group keep seed-index order.
inline std::vector<RunSummary> summarize_records(std::vector<RunRecord> records) {
  std::sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.dataset, a.attack, a.budget, a.defense, a.model, a.seed_index) <
           std::tie(b.dataset, b.attack, b.budget, b.defense, b.model, b.seed_index);
  });
  std::vector<RunSummary> out;
  for (const RunRecord& r : records) {
    if (out.empty() || std::tie(out.back().dataset, out.back().attack, out.back().budget, out.back().defense,
                                out.back().model) != std::tie(r.dataset, r.attack, r.budget, r.defense, r.model)) {
      RunSummary s;
      s.dataset = r.dataset;
      s.attack = r.attack;
      s.budget = r.budget;
      s.defense = r.defense;
      s.model = r.model;
      out.push_back(std::move(s));
    }
    RunSummary& s = out.back();
    if (!r.ok) {
      ++s.n_failed;
      if (std::find(s.errors.begin(), s.errors.end(), r.error) == s.errors.end()) s.errors.push_back(r.error);
      continue;
    }
    s.accuracies.push_back(r.test_acc);
    if (r.final_beta) s.final_betas.push_back(*r.final_beta);
  }
  for (RunSummary& s : out) {
    s.mean = mean_of(s.accuracies);
    s.stddev = sample_stddev(s.accuracies);
    if (!s.final_betas.empty()) s.mean_beta = mean_of(s.final_betas);
  }
  return out;
}

namespace detail {

/// Quotes a CSV cell when it contains a separator, quote or newline.
inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return q + '"';
}

inline std::vector<std::string> parse_csv_line(std::string_view line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  return cells;
}

}  // namespace detail

inline constexpr std::string_view kRunsHeader =
    "dataset,attack,budget,defense,model,seed_index,seed,status,test_acc,final_beta,error";

inline std::string format_runs_csv(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os << kRunsHeader << '\n';
  for (const RunRecord& r : records) {
    os << detail::csv_cell(r.dataset) << ',' << r.attack << ',' << r.budget << ',' << r.defense << ',' << r.model
       << ',' << r.seed_index << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ','
       << (r.ok ? format_exact(r.test_acc) : "") << ',' << (r.final_beta ? format_exact(*r.final_beta) : "") << ','
       << detail::csv_cell(r.error) << '\n';
  }
  return os.str();
}

inline std::vector<RunRecord> parse_runs_csv(const std::string& text, const std::string& origin) {
  std::vector<RunRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  auto fail = [&](const std::string& what) { throw ParseError(origin + ":" + std::to_string(ln) + ": " + what); };
  while (std::getline(in, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (ln == 1) {
      if (line != kRunsHeader) fail("unexpected header");
      continue;
    }
    if (line.empty()) continue;
    auto cells = detail::parse_csv_line(line);
    if (cells.size() != 11) fail("expected 11 columns, found " + std::to_string(cells.size()));
    RunRecord r;
    r.dataset = cells[0];
    r.attack = cells[1];
    r.defense = cells[3];
    r.model = cells[4];
    if (!detail::parse_number(cells[2], r.budget) || !detail::parse_number(cells[5], r.seed_index) ||
        !detail::parse_number(cells[6], r.seed)) {
      fail("bad integer field");
    }
    r.ok = cells[7] == "ok";
    if (!r.ok && cells[7] != "failed") fail("status must be ok or failed");
    if (r.ok && !detail::parse_number(cells[8], r.test_acc)) fail("bad test_acc");
    if (!cells[9].empty()) {
      double b = 0.0;
      if (!detail::parse_number(cells[9], b)) fail("bad final_beta");
      r.final_beta = b;
    }
    r.error = cells[10];
    out.push_back(std::move(r));
  }
  if (ln == 0) throw ParseError(origin + ": empty file");
  return out;
}

inline constexpr std::string_view kSummaryHeader =
    "dataset,attack,budget,defense,model,n_seeds,n_failed,mean_acc,std_acc,accuracy_pct,mean_beta,errors";

/// Exact mean/std as fractions plus a "mean ± std" percentage cell with two
/// decimals. mean_beta is empty for models without a beta; errors joins the
/// distinct failure reasons with "; ".
inline std::string format_summary_csv(const std::vector<RunSummary>& rows) {
  std::ostringstream os;
  os << kSummaryHeader << '\n';
  for (const RunSummary& s : rows) {
    const bool any = !s.accuracies.empty();
    os << detail::csv_cell(s.dataset) << ',' << s.attack << ',' << s.budget << ',' << s.defense << ',' << s.model << ','
       << s.accuracies.size() << ',' << s.n_failed << ',' << (any ? format_exact(s.mean) : "") << ','
       << (any ? format_exact(s.stddev) : "") << ','
       << (any ? format_fixed(100.0 * s.mean, 2) + " ± " + format_fixed(100.0 * s.stddev, 2) : "") << ','
       << (s.mean_beta ? format_fixed(*s.mean_beta, 4) : "") << ',';
    std::string joined;
    for (const std::string& e : s.errors) joined += (joined.empty() ? "" : "; ") + e;
    os << detail::csv_cell(joined) << '\n';
  }
  return os.str();
}

struct ExperimentOutput {
  std::vector<SeedRun> seeds;
  std::vector<RunRecord> records;
  std::vector<RunSummary> summary;
};

/// Runs every seed, on `cfg.threads` workers, and writes under cfg.out:
///   config.txt, dataset/ (the clean graph), runs.csv, summary.csv and
///   seed_<i>/{diff.txt, <model>_trajectory.csv, error.txt}.
/// A failing seed is recorded, not fatal.
inline ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Dataset ds = materialize_dataset(cfg.dataset);
  ExperimentOutput out;
  out.seeds.resize(cfg.n_seeds);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.n_seeds; i = next++) out.seeds[i] = run_seed(cfg, ds, i);
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < std::min(cfg.threads, cfg.n_seeds); ++t) pool.emplace_back(worker);
    worker();
  }

  const std::string attack = cfg.attack ? to_string(*cfg.attack) : "none";
  const std::string defense = to_string(cfg.defense.kind);
  save_dataset(ds, cfg.out / "dataset");
  write_file_atomic(cfg.out / "config.txt", format_experiment_config(cfg));
  for (const SeedRun& s : out.seeds) {
    const auto dir = cfg.out / ("seed_" + std::to_string(s.index));
    std::filesystem::create_directories(dir);
    if (cfg.attack && !s.error) {
      write_edge_diff(dir / "diff.txt", s.diff, {attack, derive_seed(s.seed, seed_tag::kAttack), s.budget});
    }
    if (s.error) write_file_atomic(dir / "error.txt", *s.error + "\n");
    for (const ModelRun& r : s.runs) {
      write_file_atomic(dir / (to_string(r.model) + "_trajectory.csv"), format_trajectory_csv(r.result.trajectory));
    }
    for (std::size_t k = 0; k < cfg.models.size(); ++k) {
      RunRecord rec;
      rec.dataset = ds.manifest.name;
      rec.attack = attack;
      rec.budget = cfg.attack ? cfg.resolve_budget(ds.graph.n_edges()) : 0;
      rec.defense = defense;
      rec.model = to_string(cfg.models[k]);
      rec.seed_index = s.index;
      rec.seed = s.seed;
      if (s.error) {
        rec.error = *s.error;
      } else {
        rec.ok = true;
        rec.test_acc = s.runs[k].result.test_acc;
        rec.final_beta = s.runs[k].result.final_beta;
      }
      out.records.push_back(std::move(rec));
    }
  }
  out.summary = summarize_records(out.records);
  write_file_atomic(cfg.out / "runs.csv", format_runs_csv(out.records));
  write_file_atomic(cfg.out / "summary.csv", format_summary_csv(out.summary));
  return out;
}

/// Collects every runs.csv below `dir` into one comparison table.
inline std::string summarize(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("summarize: " + dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "runs.csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> all;
  for (const auto& f : files) {
    auto recs = parse_runs_csv(read_file(f), f.string());
    all.insert(all.end(), recs.begin(), recs.end());
  }
  if (all.empty()) throw Error("summarize: no completed runs under " + dir.string());
  return format_summary_csv(summarize_records(std::move(all)));
}

}  // namespace betagnn
