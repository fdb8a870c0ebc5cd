// betagnn: command-line front end for dataset generation, poisoning,
// defenses, training and multi-seed experiments.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "betagnn/betagnn.hpp"

namespace fs = std::filesystem;
using namespace betagnn;

namespace {

// Exit codes: 1 runtime failure, 2 bad usage or input.
int report(const std::string& kind, const std::string& message, int code) {
  nlohmann::json j = {{"status", "error"}, {"kind", kind}, {"message", message}};
  std::cerr << j.dump() << '\n';
  return code;
}

struct DataArgs {
  std::string data;
  std::string diff;
};

Dataset load_with_diff(const DataArgs& a) {
  Dataset ds = load_dataset(a.data);
  if (!a.diff.empty()) ds.graph = apply_edge_diff(ds.graph, read_edge_diff(a.diff).first);
  return ds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"betagnn: graph poisoning attacks, defenses and beta-ensemble GNNs"};
  app.require_subcommand(1);
  std::string format = "csv";
  app.add_option("--format", format, "Output format for tables")
      ->check(CLI::IsMember({"csv"}))
      ->capture_default_str();

  // gen-sbm
  auto* gen = app.add_subcommand("gen-sbm", "Generate a stochastic block model dataset");
  SbmParams sbm;
  std::string gen_config;
  std::string gen_out;
  gen->add_option("--config", gen_config, "Experiment config; its sbm.* keys are used");
  gen->add_option("--n", sbm.n, "Nodes")->capture_default_str();
  gen->add_option("--classes", sbm.n_classes, "Blocks")->capture_default_str();
  gen->add_option("--p-in", sbm.p_in, "Within-block edge probability")->capture_default_str();
  gen->add_option("--p-out", sbm.p_out, "Cross-block edge probability")->capture_default_str();
  gen->add_option("--feature-dim", sbm.feature_dim, "Feature columns")->capture_default_str();
  gen->add_option("--noise", sbm.feature_noise, "Feature noise std")->capture_default_str();
  auto* gen_seed = gen->add_option("--seed", sbm.seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output dataset directory")->required();

  // attack
  auto* atk = app.add_subcommand("attack", "Compute a poisoning edge diff");
  DataArgs atk_data;
  std::string atk_kind = "random";
  std::optional<std::size_t> atk_budget;
  double atk_ratio = 0.0;
  std::vector<NodeId> atk_targets;
  std::string atk_objective = "train-loss";
  int atk_surrogate_epochs = 100;
  std::uint64_t atk_seed = 0;
  std::string atk_out;
  atk->add_option("--data", atk_data.data, "Dataset directory")->required();
  atk->add_option("--kind", atk_kind, "Attack kind")
      ->check(CLI::IsMember({"random", "heterophily-inject", "grad-untargeted", "greedy-targeted"}))
      ->capture_default_str();
  atk->add_option("--budget", atk_budget, "Edge flips (per target for greedy-targeted)");
  atk->add_option("--budget-ratio", atk_ratio, "Edge flips as a fraction of |E|");
  atk->add_option("--targets", atk_targets, "Target node ids")->delimiter(',');
  atk->add_option("--objective", atk_objective, "Surrogate loss maximised by grad-untargeted")
      ->check(CLI::IsMember({"train-loss", "self-training"}))
      ->capture_default_str();
  atk->add_option("--surrogate-epochs", atk_surrogate_epochs)->capture_default_str();
  atk->add_option("--seed", atk_seed, "Attack seed; also seeds the split")->capture_default_str();
  atk->add_option("--out", atk_out, "Edge diff file")->required();

  // defend
  auto* def = app.add_subcommand("defend", "Clean a (possibly poisoned) graph");
  DataArgs def_data;
  std::string def_method = "jaccard";
  DefenseSpec def_spec;
  std::uint64_t def_seed = 0;
  std::string def_out;
  def->add_option("--data", def_data.data, "Dataset directory")->required();
  def->add_option("--diff", def_data.diff, "Edge diff to apply first");
  def->add_option("--method", def_method, "Defense")->check(CLI::IsMember({"jaccard", "svd"}))->capture_default_str();
  def->add_option("--tau", def_spec.tau, "Jaccard threshold")->capture_default_str();
  def->add_option("--rank", def_spec.rank, "SVD rank")->capture_default_str();
  def->add_option("--iters", def_spec.iters, "SVD power iterations")->capture_default_str();
  def->add_option("--seed", def_seed)->capture_default_str();
  def->add_option("--out", def_out, "Output dataset directory")->required();

  // train
  auto* trn = app.add_subcommand("train", "Train one model and report test accuracy");
  DataArgs trn_data;
  std::string trn_model = "beta-gcn";
  ExperimentConfig trn_cfg;
  std::string trn_config;
  std::string trn_out;
  std::optional<std::uint64_t> trn_seed;
  trn->add_option("--data", trn_data.data, "Dataset directory")->required();
  trn->add_option("--diff", trn_data.diff, "Edge diff to apply first");
  trn->add_option("--config", trn_config, "Experiment config supplying train.* and model sizes");
  trn->add_option("--model", trn_model, "Model")
      ->check(CLI::IsMember({"mlp", "gcn", "gpr", "beta-gcn", "beta-gpr"}))
      ->capture_default_str();
  trn->add_option("--seed", trn_seed, "Seed for split, init and dropout");
  trn->add_option("--out", trn_out, "Directory for trajectory.csv");

  // run
  auto* run = app.add_subcommand("run", "Full attack -> defense -> train pipeline over seeds");
  std::string run_config;
  std::optional<std::uint64_t> run_seed;
  std::string run_out;
  std::optional<std::size_t> run_threads;
  run->add_option("--config", run_config, "Experiment config")->required();
  run->add_option("--seed", run_seed, "Override the global seed");
  run->add_option("--out", run_out, "Override the output directory");
  run->add_option("--threads", run_threads, "Override worker count");

  // summarize
  auto* sum = app.add_subcommand("summarize", "Aggregate runs.csv files into a comparison table");
  std::string sum_dir;
  std::string sum_out;
  sum->add_option("dir", sum_dir, "Results directory")->required();
  sum->add_option("--out", sum_out, "Write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), 2);
  }

  try {
    if (*gen) {
      if (!gen_config.empty()) {
        const std::uint64_t seed = sbm.seed;
        const auto cfg = load_experiment_config(gen_config);
        const auto* p = std::get_if<SbmParams>(&cfg.dataset);
        if (!p) throw Error(gen_config + ": dataset is not sbm");
        sbm = *p;
        if (*gen_seed) sbm.seed = seed;
      }
      const Dataset ds = generate_sbm(sbm);
      save_dataset(ds, gen_out);
      std::cout << "nodes,edges,homophily\n"
                << ds.graph.n_nodes() << ',' << ds.graph.n_edges() << ','
                << format_exact(homophily_score(ds.graph, ds.labels)) << '\n';
    } else if (*atk) {
      const Dataset ds = load_dataset(atk_data.data);
      AttackSpec spec;
      spec.kind = parse_attack_kind(atk_kind);
      spec.seed = atk_seed;
      spec.objective = parse_attack_objective(atk_objective);
      spec.surrogate.epochs = atk_surrogate_epochs;
      spec.targets = atk_targets;
      spec.budget.b_edges = atk_budget ? *atk_budget
                                       : static_cast<std::size_t>(std::llround(atk_ratio * ds.graph.n_edges()));
      for (NodeId t : spec.targets) {
        if (t >= ds.graph.n_nodes()) throw Error("target " + std::to_string(t) + " out of range");
      }
      DataSplit split = make_split(ds.graph.n_nodes(), atk_seed);
      const AttackResult r = run_attack(ds.graph, ds.features, ds.labels, split, spec);
      write_edge_diff(atk_out, r.diff, {atk_kind, atk_seed, spec.budget.b_edges});
      const SparseGraph g = apply_edge_diff(ds.graph, r.diff);
      std::cout << "kind,budget,flips,added,removed,truncated,homophily_before,homophily_after\n"
                << atk_kind << ',' << spec.budget.b_edges << ',' << r.diff.size() << ',' << r.diff.added.size() << ','
                << r.diff.removed.size() << ',' << (r.truncated ? 1 : 0) << ','
                << format_exact(homophily_score(ds.graph, ds.labels)) << ','
                << format_exact(homophily_score(g, ds.labels)) << '\n';
    } else if (*def) {
      Dataset ds = load_with_diff(def_data);
      const std::size_t before = ds.graph.n_edges();
      switch (parse_defense_kind(def_method)) {
        case DefenseKind::Jaccard: ds.graph = jaccard_prune(ds.graph, ds.features, def_spec.tau); break;
        case DefenseKind::Svd: ds.graph = truncated_svd_clean(ds.graph, def_spec.rank, def_spec.iters, def_seed); break;
        case DefenseKind::None: break;
      }
      save_dataset(ds, def_out);
      std::cout << "method,edges_before,edges_after\n" << def_method << ',' << before << ',' << ds.graph.n_edges() << '\n';
    } else if (*trn) {
      if (!trn_config.empty()) trn_cfg = load_experiment_config(trn_config);
      if (trn_seed) trn_cfg.seed = *trn_seed;
      const Dataset ds = load_with_diff(trn_data);
      const std::uint64_t s = trn_cfg.seed;
      const DataSplit split = make_split(ds.graph.n_nodes(), derive_seed(s, seed_tag::kSplit));
      const ModelKind kind = parse_model_kind(trn_model);
      const TrainResult r = train_model(kind, trn_cfg, ds.graph, ds, split, derive_seed(s, seed_tag::kModel),
                                        derive_seed(s, seed_tag::kTrain));
      if (!trn_out.empty()) write_file_atomic(fs::path(trn_out) / "trajectory.csv", format_trajectory_csv(r.trajectory));
      std::cout << "model,best_epoch,best_val_acc,test_acc,final_beta\n"
                << trn_model << ',' << r.best_epoch << ',' << format_exact(r.best_val_acc) << ','
                << format_exact(r.test_acc) << ',' << (r.final_beta ? format_exact(*r.final_beta) : "") << '\n';
    } else if (*run) {
      ExperimentConfig cfg = load_experiment_config(run_config);
      if (run_seed) cfg.seed = *run_seed;
      if (!run_out.empty()) cfg.out = run_out;
      if (run_threads) cfg.threads = *run_threads;
      const ExperimentOutput out = run_experiment(cfg);
      std::cout << format_summary_csv(out.summary);
      for (const SeedRun& s : out.seeds) {
        if (s.error) std::cerr << "seed " << s.index << " failed: " << *s.error << '\n';
      }
    } else if (*sum) {
      const std::string table = summarize(sum_dir);
      if (sum_out.empty()) {
        std::cout << table;
      } else {
        write_file_atomic(sum_out, table);
      }
    }
  } catch (const ParseError& e) {
    return report("parse", e.what(), 2);
  } catch (const NumericError& e) {
    return report("numeric", e.what(), 1);
  } catch (const std::exception& e) {
    return report("runtime", e.what(), 1);
  }
  return 0;
}
