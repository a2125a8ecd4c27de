// rcme: synthesize or ingest a taxonomy, train embedding tables under the
// RCME objective, evaluate them, and re-export table files.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error, 3 oracle mismatch.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "rcme/config.hpp"
#include "rcme/oracle.hpp"

namespace fs = std::filesystem;

namespace {

struct OracleMismatch {
  std::string what;
};

void apply_sets(rcme::RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    std::size_t eq = s.find('=');
    if (eq == std::string::npos) throw rcme::ArgError("--set expects key=value, got: " + s);
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
}

void apply_ablation(rcme::RunConfig& cfg, const std::string& ablation) {
  if (ablation.empty()) return;
  cfg.use_le = cfg.use_ge = cfg.use_cma = cfg.use_prior = false;
  std::istringstream ss(ablation);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "le") cfg.use_le = true;
    else if (tok == "ge") cfg.use_ge = true;
    else if (tok == "cma") cfg.use_cma = true;
    else if (tok == "prior") cfg.use_prior = true;
    else throw rcme::ArgError("--loss-ablation: unknown loss " + tok);
  }
}

std::vector<int> parse_steps_list(const std::string& sweep) {
  std::vector<int> out;
  std::istringstream ss(sweep);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    int v = (int)rcme::detail::parse_int(tok);
    if (v < 1) throw rcme::ArgError("--steps-sweep: steps must be positive");
    out.push_back(v);
  }
  if (out.empty()) throw rcme::ArgError("--steps-sweep: empty list");
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"RCME hierarchical entailment embedding engine"};
  app.require_subcommand(1);

  rcme::RunConfig cfg;
  std::string config_path;
  std::vector<std::string> sets;

  // synth
  auto* synth = app.add_subcommand("synth", "write a balanced synthetic taxonomy");
  int depth = 0, branching = 0;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--depth", depth, "ranks below the root")->required();
  synth->add_option("--branching", branching, "children per node")->required();
  synth->add_option("--seed", synth_seed, "recorded for reproducibility; synthesis is deterministic");
  synth->add_option("--out", synth_out, "output taxonomy file")->required();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "validate and normalize a taxonomy file");
  std::string ingest_in, ingest_out, delim = "|";
  ingest->add_option("--in", ingest_in, "input file (path or jsonl format)")->required();
  ingest->add_option("--out", ingest_out, "normalized output file")->required();
  ingest->add_option("--delimiter", delim, "label delimiter (default |)");

  // train
  auto* train = app.add_subcommand("train", "train embedding tables");
  std::string train_tax, train_out;
  std::string ablation;
  train->add_option("--taxonomy", train_tax, "taxonomy file")->required();
  train->add_option("--out-dir", train_out, "output directory")->required();
  train->add_option("--config", config_path, "config file (flat key=value)");
  train->add_option("--set", sets, "override a config key, key=value (repeatable)");
  train->add_option("--loss-ablation", ablation,
                    "comma list of enabled losses, e.g. le,ge,cma (ablation rows)");
  std::vector<std::pair<std::string, std::string>> train_flags;
  for (const char* key : {"seed", "dim", "epochs", "learning_rate", "batch_size", "alpha",
                          "beta", "geometry", "negative_mining", "threads", "init", "init_path"}) {
    train->add_option_function<std::string>(
        "--" + std::string(key),
        [&train_flags, key = std::string(key)](const std::string& v) {
          train_flags.emplace_back(key, v);
        },
        "config key " + std::string(key));
  }

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate exported tables");
  std::string eval_tax, eval_tables, eval_out, sweep;
  bool oracle = false;
  eval->add_option("--taxonomy", eval_tax, "taxonomy file")->required();
  eval->add_option("--tables", eval_tables, "tables file from train/export")->required();
  eval->add_option("--out-dir", eval_out, "output directory")->required();
  eval->add_option("--config", config_path, "config file (flat key=value)");
  eval->add_option("--set", sets, "override a config key, key=value (repeatable)");
  int flag_steps = 0, flag_queries = 0;
  std::uint64_t flag_eval_seed = 0;
  eval->add_option("--steps", flag_steps, "walk steps (default 50)");
  eval->add_option("--steps-sweep", sweep, "comma list of steps settings, one report each");
  eval->add_option("--queries", flag_queries, "leaf queries for the ordering metrics");
  eval->add_option("--eval-seed", flag_eval_seed, "query sampling seed");
  eval->add_flag("--oracle", oracle, "run brute-force cross-checks; mismatch exits 3");

  // export
  auto* exp = app.add_subcommand("export", "validate and re-serialize a tables file");
  std::string exp_in, exp_out, exp_tax;
  exp->add_option("--tables", exp_in, "input tables file")->required();
  exp->add_option("--taxonomy", exp_tax, "taxonomy file the tables belong to")->required();
  exp->add_option("--out", exp_out, "output tables file")->required();

  app.parse(argc, argv);

  if (*synth) {
    rcme::Taxonomy t = rcme::synth_taxonomy(depth, branching);
    rcme::write_taxonomy(t, synth_out);
    std::cout << "synth: wrote " << t.nodes.size() << " nodes (" << t.leaves.size()
              << " leaves, depth " << t.depth() << ", seed " << synth_seed << ") to "
              << synth_out << "\n";
    return 0;
  }

  if (*ingest) {
    if (delim.size() != 1) throw rcme::ArgError("--delimiter must be a single character");
    rcme::Taxonomy t = rcme::ingest_file(ingest_in, delim[0]);
    rcme::write_taxonomy(t, ingest_out, delim[0]);
    std::cout << "ingest: " << t.nodes.size() << " nodes, " << t.leaves.size()
              << " leaves, depth " << t.depth() << " -> " << ingest_out << "\n";
    return 0;
  }

  if (*train) {
    if (!config_path.empty()) cfg.load(config_path);
    apply_sets(cfg, sets);      // flags win over the file
    for (const auto& [k, v] : train_flags) cfg.set(k, v);
    apply_ablation(cfg, ablation);
    rcme::Taxonomy t = rcme::ingest_file(train_tax, cfg.delim_char());
    rcme::TrainConfig tc = cfg.to_train_config();
    rcme::TrainResult res = rcme::train(t, tc);
    fs::create_directories(train_out);
    rcme::export_tables(t, res.emb, res.inst, train_out + "/tables.tsv");
    rcme::write_train_log(res.log, train_out + "/train_log.tsv");
    {
      std::ofstream f(train_out + "/config.txt");
      if (!f) throw rcme::IoError("cannot write resolved config");
      cfg.write(f);
    }
    double first = res.log.empty() ? 0.0 : res.log.front().total;
    double last = res.log.empty() ? 0.0 : res.log.back().total;
    std::cout << "train: " << res.log.size() << " steps, loss " << first << " -> " << last
              << ", tables in " << train_out << "\n";
    return 0;
  }

  if (*eval) {
    if (!config_path.empty()) cfg.load(config_path);
    apply_sets(cfg, sets);      // flags win over the file
    if (eval->count("--steps")) cfg.steps = flag_steps;
    if (eval->count("--queries")) cfg.eval_queries = flag_queries;
    if (eval->count("--eval-seed")) cfg.eval_seed = flag_eval_seed;
    rcme::Taxonomy t = rcme::ingest_file(eval_tax, cfg.delim_char());
    auto [emb, inst] = rcme::bind_tables(rcme::import_tables(eval_tables), t);
    fs::create_directories(eval_out);
    std::vector<int> steps_list = sweep.empty() ? std::vector<int>{cfg.steps}
                                                : parse_steps_list(sweep);
    for (int s : steps_list) {
      rcme::EvalConfig ec = cfg.to_eval_config();
      ec.steps = s;
      rcme::EvalReport rep = rcme::evaluate(emb, inst, t, ec);
      std::string base = eval_out + "/report_steps" + std::to_string(s);
      {
        std::ofstream f(base + ".txt");
        if (!f) throw rcme::IoError("cannot write report");
        rcme::write_report(rep, f);
      }
      {
        std::ofstream f(base + "_per_rank.tsv");
        if (!f) throw rcme::IoError("cannot write per-rank report");
        rcme::write_report_table(rep, f);
      }
      std::cout << "eval steps=" << s << ": tau_d=" << rep.tau_d << " (defined "
                << rep.tau_defined << "/" << rep.query_count << ") P=" << rep.precision
                << " R=" << rep.recall << " F1=" << rep.f1
                << " lemma1=" << rep.lemma1_pass_rate
                << " transitivity=" << rep.transitivity_rate << "\n";
      if (oracle) {
        std::string mismatch = rcme::oracle::cross_check(emb, inst, t, ec);
        if (!mismatch.empty()) throw OracleMismatch{mismatch};
        std::cout << "oracle steps=" << s << ": all cross-checks agree\n";
      }
    }
    return 0;
  }

  if (*exp) {
    rcme::Taxonomy t = rcme::ingest_file(exp_tax);
    auto [emb, inst] = rcme::bind_tables(rcme::import_tables(exp_in), t);
    rcme::export_tables(t, emb, inst, exp_out);
    std::cout << "export: " << emb.size() << " nodes + " << inst.size() << " instances -> "
              << exp_out << "\n";
    return 0;
  }

  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << e.what() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const OracleMismatch& e) {
    std::cerr << "oracle mismatch: " << e.what << "\n";
    return 3;
  } catch (const rcme::ArgError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const rcme::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
