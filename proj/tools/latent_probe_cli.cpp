// latent-probe: train, select, evaluate and compare latent-subset probes.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "latent_probe/checkpoint.hpp"
#include "latent_probe/overlap.hpp"
#include "latent_probe/planted.hpp"
#include "latent_probe/selection.hpp"

namespace fs = std::filesystem;
using namespace latent_probe;

namespace {

// Bad flag values found after parsing; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataPaths {
  std::string train, dev, test, attribute;
  int min_count = 20;

  void add(CLI::App* app) {
    app->add_option("--train", train, "training split file (IPDS or JSONL)")->required()->check(CLI::ExistingFile);
    app->add_option("--dev", dev, "dev split file")->required()->check(CLI::ExistingFile);
    app->add_option("--test", test, "test split file")->required()->check(CLI::ExistingFile);
    app->add_option("--min-count", min_count, "drop property values seen fewer times across splits")->capture_default_str();
    app->add_option("--attribute", attribute, "attribute name (IPDS headers do not carry one)");
  }

  ProbingDataset load() const {
    ProbingDataset ds = load_dataset(train, dev, test);
    validate(ds);
    if (!attribute.empty()) ds.property.attribute = attribute;
    return filter_rare_values(ds, min_count);
  }
};

struct Common {
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 0;

  void add(CLI::App* app, bool with_seed = true) {
    app->add_option("--out-dir", out_dir, "directory for all outputs")->capture_default_str();
    if (with_seed) app->add_option("--seed", seed, "seed for all randomness")->capture_default_str();
    app->add_option("--threads", threads, "worker threads (0: LATENT_PROBE_THREADS or all cores)")->capture_default_str();
  }

  fs::path out(const std::string& name) const {
    fs::create_directories(out_dir);
    return fs::path(out_dir) / name;
  }
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  for (const auto& t : split_csv(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(t, &used));
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw UsageError(what + ": '" + t + "' is not an integer");
    }
  }
  return out;
}

/// Prints every option of the subcommand with defaults filled in and
/// returns its hash. The printed block is itself a valid --config file.
std::string announce(const CLI::App* sub) {
  std::string cfg = sub->config_to_str(true, false);
  const std::string hash = hex64(fnv1a64(sub->get_name() + "\n" + cfg));
  std::cout << "# latent-probe " << sub->get_name() << " resolved config (hash " << hash << ")\n" << cfg << std::flush;
  return hash;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DataError("cannot write " + p.string());
  return os;
}

template <class F>
decltype(auto) with_probe(const Checkpoint& ck, F&& f) {
  return std::visit(std::forward<F>(f), ck.probe);
}

void check_compatible(const Checkpoint& ck, ProbingDataset& ds) {
  if (ds.property.attribute.empty()) ds.property.attribute = ck.property.attribute;
  if (ck.dim != ds.dim) throw DataError("checkpoint has dim " + std::to_string(ck.dim) + " but the dataset has " + std::to_string(ds.dim));
  if (ck.property.values != ds.property.values) throw DataError("checkpoint and dataset disagree on the property value table (check --min-count)");
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
  return v;
}

/// Rewrites `sub ... --config FILE ...` into `sub <file entries as flags> ...`.
/// Returns the arguments in the reversed order CLI11's parse(vector) expects.
std::vector<std::string> expand_config(CLI::App& app, int argc, char** argv) {
  std::vector<std::string> in(argv + 1, argv + argc), file_args, positionals, rest;
  std::string config;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == "--config") {
      if (i + 1 >= in.size()) throw UsageError("--config needs a file");
      config = in[++i];
    } else if (in[i].rfind("--config=", 0) == 0) {
      config = in[i].substr(9);
    } else {
      rest.push_back(in[i]);
    }
  }
  if (!config.empty()) {
    if (rest.empty()) throw UsageError("--config must follow a subcommand");
    CLI::App* sub = app.get_subcommand_no_throw(rest.front());
    if (sub == nullptr) throw UsageError("unknown subcommand '" + rest.front() + "'");
    std::ifstream is(config);
    if (!is) throw UsageError("cannot open config file " + config);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#' || line[first] == ';') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw UsageError(config + ":" + std::to_string(lineno) + ": expected key=value");
      std::string key = line.substr(first, eq - first), value = line.substr(eq + 1);
      key.erase(key.find_last_not_of(" \t") + 1);
      value.erase(0, value.find_first_not_of(" \t"));
      value.erase(value.find_last_not_of(" \t\r") + 1);
      if (sub->get_option_no_throw("--" + key) != nullptr) {
        // An empty value would make the parser swallow the next token.
        if (!unquote(value).empty()) file_args.push_back("--" + key + "=" + unquote(value));
      } else if (sub->get_option_no_throw(key) != nullptr) {
        if (!value.empty() && value.front() == '[') {
          for (const auto& v : nlohmann::json::parse(value)) positionals.push_back(v.get<std::string>());
        } else {
          positionals.push_back(unquote(value));
        }
      } else {
        throw UsageError(config + ":" + std::to_string(lineno) + ": unknown key '" + key + "' for " + sub->get_name());
      }
    }
  }
  std::vector<std::string> out;
  if (!rest.empty()) out.push_back(rest.front());
  out.insert(out.end(), file_args.begin(), file_args.end());
  out.insert(out.end(), rest.begin() + (rest.empty() ? 0 : 1), rest.end());
  if (!positionals.empty()) out.insert(out.end(), positionals.begin(), positionals.end());
  std::reverse(out.begin(), out.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intrinsic probing with latent subset variables", "latent-probe"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for all subcommands");
  // Repeated options keep the last value, so flags override --config entries.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;

  // ---- train
  auto* train_cmd = app.add_subcommand("train", "train a probe and its subset distribution");
  DataPaths train_data;
  Common train_common;
  TrainConfig tc;
  std::string family_name = "cond-poisson", probe_name = "linear";
  bool no_bias_penalty = false;
  train_data.add(train_cmd);
  train_common.add(train_cmd);
  train_cmd->add_option("--config", config_path, "flat key=value file; flags override it")->configurable(false);
  train_cmd->add_option("--family", family_name, "poisson | cond-poisson | fixed-full")->capture_default_str();
  train_cmd->add_option("--probe", probe_name, "linear | mlp1 | mlp2 | gaussian")->capture_default_str();
  train_cmd->add_option("--mc-samples", tc.mc_samples, "Monte Carlo subsets per step")->capture_default_str();
  train_cmd->add_option("--entropy-scale", tc.entropy_scale, "weight of the entropy term")->capture_default_str();
  train_cmd->add_option("--l1", tc.l1, "L1 penalty")->capture_default_str();
  train_cmd->add_option("--l2", tc.l2, "L2 penalty")->capture_default_str();
  train_cmd->add_flag("--no-bias-penalty", no_bias_penalty, "exclude biases from the penalty");
  train_cmd->add_option("--lr", tc.learning_rate, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--max-epochs", tc.max_epochs, "epoch limit")->capture_default_str();
  train_cmd->add_option("--patience", tc.patience, "epochs without holdout improvement before stopping")->capture_default_str();
  train_cmd->add_option("--holdout-fraction", tc.holdout_fraction, "share of train held out for early stopping")->capture_default_str();
  train_cmd->add_option("--batch-size", tc.batch_size, "minibatch size")->capture_default_str();
  train_cmd->add_option("--hidden", tc.hidden_width, "hidden width of MLP probes")->capture_default_str();
  train_cmd->add_flag("--loo-baseline", tc.loo_baseline, "leave-one-out baseline for the score-function term");
  GaussianShrinkage shrink;
  train_cmd->add_option("--gaussian-shrinkage", shrink.toward_diagonal, "covariance shrinkage toward its diagonal (gaussian probe)")->capture_default_str();

  // ---- select
  auto* select_cmd = app.add_subcommand("select", "greedy selection of informative dimensions");
  DataPaths select_data;
  Common select_common;
  std::string select_ckpt;
  int max_dims = 50;
  bool upper_bound = false;
  UpperBoundOptions ub;
  TrainConfig ub_tc;
  select_data.add(select_cmd);
  select_common.add(select_cmd);
  select_cmd->add_option("--config", config_path, "flat key=value file; flags override it")->configurable(false);
  select_cmd->add_option("--checkpoint", select_ckpt, "probe checkpoint from `train`")->check(CLI::ExistingFile);
  select_cmd->add_option("--max-dims", max_dims, "number of greedy steps")->capture_default_str();
  select_cmd->add_flag("--upper-bound", upper_bound, "retrain a probe for every candidate instead of using a checkpoint");
  select_cmd->add_option("--ub-max-epochs", ub.max_epochs, "per-candidate epoch limit (upper bound)")->capture_default_str();
  select_cmd->add_option("--ub-patience", ub.patience, "per-candidate patience (upper bound)")->capture_default_str();
  select_cmd->add_flag("--ub-full-budget", ub.full_budget, "use --max-epochs/--patience per candidate instead");
  select_cmd->add_option("--max-epochs", ub_tc.max_epochs, "full per-candidate epoch limit (with --ub-full-budget)")->capture_default_str();
  select_cmd->add_option("--patience", ub_tc.patience, "full per-candidate patience (with --ub-full-budget)")->capture_default_str();
  select_cmd->add_option("--lr", ub_tc.learning_rate, "per-candidate learning rate (upper bound)")->capture_default_str();
  select_cmd->add_option("--l1", ub_tc.l1, "per-candidate L1 penalty (upper bound)")->capture_default_str();
  select_cmd->add_option("--l2", ub_tc.l2, "per-candidate L2 penalty (upper bound)")->capture_default_str();
  select_cmd->add_option("--time-budget", ub.time_budget_seconds, "seconds before the upper bound stops with a partial result (0: none)")
      ->capture_default_str();

  // ---- eval-subsets
  auto* eval_cmd = app.add_subcommand("eval-subsets", "NMI and accuracy on random subsets of each size");
  DataPaths eval_data;
  Common eval_common;
  std::string eval_ckpt, sizes_str = "10,50,100,250,500", eval_split = "test";
  int n_subsets = 100;
  eval_data.add(eval_cmd);
  eval_common.add(eval_cmd);
  eval_cmd->add_option("--config", config_path, "flat key=value file; flags override it")->configurable(false);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "probe checkpoint from `train`")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--sizes", sizes_str, "comma-separated subset sizes")->capture_default_str();
  eval_cmd->add_option("--n-subsets", n_subsets, "subsets drawn per size")->capture_default_str();
  eval_cmd->add_option("--split", eval_split, "split to evaluate on")->capture_default_str()->check(CLI::IsMember({"train", "dev", "test"}));

  // ---- overlap
  auto* overlap_cmd = app.add_subcommand("overlap", "top-k overlap of selections across languages");
  Common overlap_common;
  std::vector<std::string> selection_files;
  std::string languages_str, attribute;
  int top_k = 30;
  double alpha = 0.05;
  overlap_common.add(overlap_cmd, false);
  overlap_cmd->add_option("--config", config_path, "flat key=value file; flags override it")->configurable(false);
  overlap_cmd->add_option("selections", selection_files, "selection.json files, one per language")
      ->required()
      ->check(CLI::ExistingFile)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  overlap_cmd->add_option("--top-k", top_k, "size of the compared top sets")->capture_default_str();
  overlap_cmd->add_option("--alpha", alpha, "family-wise error level")->capture_default_str();
  overlap_cmd->add_option("--languages", languages_str, "comma-separated names (default: derived from file paths)");
  overlap_cmd->add_option("--attribute", attribute, "attribute name (default: taken from the selections)");

  // ---- synth
  auto* synth_cmd = app.add_subcommand("synth", "write a planted synthetic dataset");
  Common synth_common;
  PlantedSpec ps;
  std::string informative_str = "0,1,2,3,4", lognormal_str, format_name = "ipds";
  synth_common.add(synth_cmd);
  synth_cmd->add_option("--config", config_path, "flat key=value file; flags override it")->configurable(false);
  synth_cmd->add_option("--dim", ps.dim, "representation dimension")->capture_default_str();
  synth_cmd->add_option("--informative", informative_str, "comma-separated 0-based informative dims")->capture_default_str();
  synth_cmd->add_option("--classes", ps.num_classes, "number of property values")->capture_default_str();
  synth_cmd->add_option("--separation", ps.separation, "distance between class means on informative dims")->capture_default_str();
  synth_cmd->add_option("--noise", ps.noise_scale, "noise standard deviation")->capture_default_str();
  synth_cmd->add_option("--n-train", ps.n_train, "training records")->capture_default_str();
  synth_cmd->add_option("--n-dev", ps.n_dev, "dev records")->capture_default_str();
  synth_cmd->add_option("--n-test", ps.n_test, "test records")->capture_default_str();
  synth_cmd->add_option("--shared-noise", ps.shared_noise, "weight of noise shared by informative dims")->capture_default_str();
  synth_cmd->add_option("--lognormal", lognormal_str, "comma-separated dims replaced by log-normal nuisance");
  synth_cmd->add_option("--format", format_name, "ipds | jsonl")->capture_default_str()->check(CLI::IsMember({"ipds", "jsonl"}));

  // ---- validate
  auto* validate_cmd = app.add_subcommand("validate", "check a dataset file against the format invariants");
  std::vector<std::string> validate_paths;
  validate_cmd->add_option("paths", validate_paths, "dataset files")
      ->required()
      ->check(CLI::ExistingFile)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  std::vector<std::string> args;
  try {
    args = expand_config(app, argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) {
      tc.family = parse_family_kind(family_name);
      tc.probe = parse_probe_kind(probe_name);
      tc.seed = train_common.seed;
      tc.penalize_bias = !no_bias_penalty;
      if (tc.probe != ProbeKind::gaussian) tc.check();
      const std::string hash = announce(train_cmd);
      const ProbingDataset ds = train_data.load();
      Checkpoint ck{tc.probe, tc.family, ds.dim, ds.property, {}, {}};
      if (tc.probe == ProbeKind::gaussian) {
        ck.probe = GaussianProbe::fit(ds.train, ds.property.num_values(), shrink);
        ck.family = FamilyKind::fixed_full;
        std::cout << "fitted gaussian probe on " << ds.train.size() << " records\n";
      } else {
        auto log_os = open_out(train_common.out("training_log.jsonl"));
        write_report_header(log_os, hash);
        const auto res = train(ds, tc, [&](const EpochRecord& r) {
          log_os << to_json(r).dump() << '\n' << std::flush;
          if (r.epoch % 50 == 0) std::cerr << "epoch " << r.epoch << " holdout " << r.holdout_objective << '\n';
        });
        ck.probe = res.theta;
        ck.phi = res.phi;
        std::cout << "best epoch " << res.best_epoch << " of " << res.log.size() << ", holdout objective " << res.best_objective << '\n';
      }
      save_checkpoint(train_common.out("probe.lpck").string(), ck);
      std::cout << "wrote " << train_common.out("probe.lpck").string() << '\n';
    } else if (*select_cmd) {
      if (!upper_bound && select_ckpt.empty()) throw UsageError("select: --checkpoint is required unless --upper-bound is given");
      const std::string hash = announce(select_cmd);
      ProbingDataset ds = select_data.load();
      if (max_dims < 0 || max_dims > ds.dim) throw UsageError("--max-dims must be in [0, " + std::to_string(ds.dim) + "]");
      const int threads = resolve_threads(select_common.threads);
      SelectionResult r;
      if (upper_bound) {
        ub_tc.seed = select_common.seed;
        ub.threads = threads;
        r = upper_bound_greedy(ds, max_dims, ub_tc, ub);
      } else {
        const Checkpoint ck = load_checkpoint(select_ckpt);
        check_compatible(ck, ds);
        r = with_probe(ck, [&](const auto& p) { return greedy_select(p, ds, max_dims, threads); });
      }
      auto csv = open_out(select_common.out("selection.csv"));
      write_selection_csv(csv, r, hash);
      auto js = open_out(select_common.out("selection.json"));
      js << to_json(r, hash).dump(2) << '\n';
      std::cout << "selected " << r.size() << " dims" << (r.truncated ? " (truncated: " + r.truncation_reason + ")" : std::string()) << '\n';
    } else if (*eval_cmd) {
      const auto sizes = parse_int_list(sizes_str, "--sizes");
      if (n_subsets < 1) throw UsageError("--n-subsets must be positive");
      const std::string hash = announce(eval_cmd);
      ProbingDataset ds = eval_data.load();
      for (int k : sizes)
        if (k < 1 || k > ds.dim) throw UsageError("--sizes: " + std::to_string(k) + " is outside [1, " + std::to_string(ds.dim) + "]");
      const Checkpoint ck = load_checkpoint(eval_ckpt);
      check_compatible(ck, ds);
      const Split& s = ds.split(parse_split_tag(eval_split));
      const auto aggs = with_probe(ck, [&](const auto& p) { return random_subset_eval(p, s, sizes, n_subsets, eval_common.seed, resolve_threads(eval_common.threads)); });
      auto csv = open_out(eval_common.out("subset_eval.csv"));
      write_subset_eval_csv(csv, aggs, hash);
      for (const auto& a : aggs) std::cout << "size " << a.size << ": NMI " << a.mean_nmi << " +- " << a.std_nmi << ", acc " << a.mean_acc << '\n';
    } else if (*overlap_cmd) {
      if (selection_files.size() < 2) throw UsageError("overlap: needs at least two selection files");
      std::vector<std::string> langs = split_csv(languages_str);
      if (!langs.empty() && langs.size() != selection_files.size()) throw UsageError("--languages must name every selection file");
      const std::string hash = announce(overlap_cmd);
      std::vector<SelectionResult> sel;
      for (const auto& f : selection_files) {
        std::ifstream is(f);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(is);
        } catch (const nlohmann::json::exception& e) {
          throw DataError(f + ": " + e.what());
        }
        sel.push_back(selection_from_json(j));
        if (langs.size() < selection_files.size() && languages_str.empty()) {
          const fs::path p(f);
          langs.push_back(p.stem() == "selection" && p.has_parent_path() ? p.parent_path().filename().string() : p.stem().string());
        }
      }
      if (attribute.empty()) attribute = sel.front().attribute.empty() ? "attribute" : sel.front().attribute;
      for (const auto& s : sel)
        if (static_cast<int>(s.dims.size()) < top_k) throw DataError("a selection has fewer than --top-k=" + std::to_string(top_k) + " dims");
      const auto m = build_overlap_matrix(attribute, langs, sel, top_k, alpha);
      const auto path = overlap_common.out("overlap_" + attribute + ".csv");
      auto csv = open_out(path);
      write_overlap_csv(csv, m, hash);
      std::cout << "wrote " << path.string() << '\n';
    } else if (*synth_cmd) {
      ps.informative_dims = parse_int_list(informative_str, "--informative");
      ps.lognormal_dims = parse_int_list(lognormal_str, "--lognormal");
      ps.seed = synth_common.seed;
      ps.check();
      announce(synth_cmd);
      const ProbingDataset ds = synthesize_planted(ps);
      const FileFormat fmt = format_name == "jsonl" ? FileFormat::jsonl : FileFormat::ipds;
      for (SplitTag t : {SplitTag::train, SplitTag::dev, SplitTag::test}) {
        const auto path = synth_common.out(split_name(t) + "." + format_name);
        write_split_file(path.string(), to_split_file(ds, t), fmt);
        std::cout << "wrote " << path.string() << " (" << ds.split(t).size() << " records)\n";
      }
    } else if (*validate_cmd) {
      int bad = 0;
      for (const auto& p : validate_paths) {
        try {
          const SplitFile f = load_split_file(p);
          validate_split(f.data, f.dim, f.property.num_values());
          std::cout << p << ": ok (dim " << f.dim << ", " << f.property.num_values() << " values, split " << split_name(f.tag) << ", "
                    << f.data.size() << " records)\n";
        } catch (const DataError& e) {
          std::cerr << p << ": invalid: " << e.what() << '\n';
          ++bad;
        }
      }
      return bad ? 1 : 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
