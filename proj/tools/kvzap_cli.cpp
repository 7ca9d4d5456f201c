// kvzap command-line driver: train-teacher -> score -> gen-dataset ->
// train-surrogate -> eval / sweep, plus the overhead tables.
//
// Exit codes: 0 success, 2 configuration error, 3 validation error (bad or
// inconsistent inputs), 4 overhead self-test mismatch. Failures print one JSON
// object on stderr: {"error": <kind>, "message": ..., "exit_code": n}.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "kvzap/kvzap.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kvzap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitValidation = 3;
constexpr int kExitSelfTest = 4;

constexpr const char* kOutDirEnv = "KVZAP_OUT_DIR";

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
    case ErrorKind::unsupported: return kExitConfig;
    default: return kExitValidation;
  }
}

int report_error(std::string_view kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
  return code;
}

struct Globals {
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string precision = "f32";
  std::size_t workers = 0;
  std::string config_file;

  // --out wins, then $KVZAP_OUT_DIR, then the working directory.
  fs::path out() const {
    if (!out_dir.empty()) return out_dir;
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
    return ".";
  }
  std::size_t pool() const { return workers ? workers : default_workers(); }
};

void write_text(const fs::path& p, const std::string& s) { write_file(p, s); }

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

// Every run leaves <subcommand>.config.json beside its outputs.
void echo_config(const fs::path& dir, const std::string& sub, const json& options) {
  write_json(dir / (sub + ".config.json"), json{{"subcommand", sub}, {"options", options}});
}

json options_json(const CLI::App& app) {
  json j = json::object();
  for (const CLI::Option* o : app.get_options()) {
    const std::string name = o->get_lnames().empty() ? "" : o->get_lnames().front();
    if (name.empty() || name == "help" || name == "config") continue;
    const auto& res = o->results();
    if (o->get_expected_max() == 0)
      j[name] = o->count() > 0;
    else if (res.size() == 1)
      j[name] = res.front();
    else if (!res.empty())
      j[name] = res;
  }
  return j;
}

// A subcommand's options may come from a JSON object whose keys are long
// option names; unknown keys are rejected. Command-line values are parsed
// after the file and win.
std::vector<std::string> expand_config(const CLI::App& sub, const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, path + ": " + e.what());
  }
  require(j.is_object(), ErrorKind::config, path + ": config must be a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    const CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option(flag);
    } catch (const CLI::OptionNotFound&) {
      throw Error(ErrorKind::config, path + ": unknown key '" + key + "' for " + sub.get_name());
    }
    if (opt->get_expected_max() == 0) {
      if (value.get<bool>()) args.push_back(flag);
      continue;
    }
    auto push = [&](const json& v) {
      args.push_back(flag);
      args.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    };
    if (value.is_array())
      for (const auto& v : value) push(v);
    else
      push(value);
  }
  return args;
}

template <typename T>
Weights<T> load_teacher_as(const std::string& path) {
  return load_checkpoint(path).template cast<T>();
}

std::shared_ptr<const Surrogate> load_surrogate_ptr(const std::string& path) {
  return std::make_shared<const Surrogate>(load_surrogate(path));
}

std::vector<std::uint64_t> seed_range(std::uint64_t begin, std::size_t count) {
  std::vector<std::uint64_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = begin + i;
  return out;
}

std::vector<Token> read_prompt_file(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<Token> out;
  for (long long v; in >> v;) out.push_back(static_cast<Token>(v));
  require(in.eof(), ErrorKind::format, path + ": prompt file must hold whitespace-separated token ids");
  return out;
}

std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// ---------------------------------------------------------------------------

struct TrainTeacherOpts {
  std::string model_config;
  std::size_t steps = TeacherHyper{}.steps;
  std::size_t batch = TeacherHyper{}.batch;
  double lr = AdamHyper{}.lr;
  std::size_t warmup = TeacherHyper{}.warmup;
  double clip = TeacherHyper{}.clip_norm;
  std::uint64_t data_seed = TeacherHyper{}.data_seed;
  std::size_t log_every = 100;
  std::string name = "teacher.kvzl";
};

int run_train_teacher(const Globals& g, const TrainTeacherOpts& o, const json& echo) {
  ModelConfig config;
  if (!o.model_config.empty()) config = ModelConfig::from_json(json::parse(read_file(o.model_config)));
  config.seed = g.seed;
  config.validate();
  TeacherHyper h;
  h.steps = o.steps;
  h.batch = o.batch;
  h.adam.lr = o.lr;
  h.warmup = o.warmup;
  h.clip_norm = o.clip;
  h.data_seed = o.data_seed;
  h.log_every = o.log_every;
  const auto out = g.out();
  fs::create_directories(out);
  echo_config(out, "train-teacher", echo);
  auto result = train_teacher(config, TaskMix{}, h, [](std::size_t step, double loss) {
    std::cerr << "step " << step << " loss " << loss << "\n";
  });
  const std::string bytes = encode_checkpoint(result.weights);
  write_text(out / o.name, bytes);
  std::ostringstream curve;
  curve << "step,loss\n";
  curve.precision(10);
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i) curve << i + 1 << ',' << result.loss_curve[i] << '\n';
  write_text(out / "loss.csv", curve.str());
  std::cout << json{{"checkpoint", (out / o.name).string()},
                    {"content_hash", content_hash(bytes)},
                    {"parameters", parameter_count(config)},
                    {"final_loss", result.loss_curve.empty() ? 0.0 : result.loss_curve.back()}}
                   .dump()
            << std::endl;
  return kExitOk;
}

struct ScoreOpts {
  std::string checkpoint;
  std::uint64_t prompt_seed = 0;
  std::size_t length = 64;
  std::string prompt_file;
  std::string scorer = "kvzip_plus";
};

template <typename T>
int run_score(const Globals& g, const ScoreOpts& o, const json& echo) {
  const auto w = load_teacher_as<T>(o.checkpoint);
  const std::vector<Token> prompt =
      o.prompt_file.empty() ? dataset_prompt(o.prompt_seed, o.length) : read_prompt_file(o.prompt_file);
  const ScoreKind kind = score_kind_from_string(o.scorer);
  require(kind != ScoreKind::surrogate_log, ErrorKind::config, "scorer must be kvzip or kvzip_plus");
  auto r = run_kvzip_oracle(w, std::span<const Token>(prompt));
  const ScoreTensor& s = kind == ScoreKind::kvzip ? r.kvzip : r.kvzip_plus;
  const auto out = g.out();
  fs::create_directories(out);
  echo_config(out, "score", echo);
  std::ostringstream csv;
  write_scores_csv(csv, s);
  write_text(out / "scores.csv", csv.str());
  save_container(out / "scores.kvzs", scores_container(s, json{{"prompt", prompt}}));
  std::cout << json{{"scores", (out / "scores.csv").string()}, {"positions", s.width()}, {"kind", o.scorer}}.dump()
            << std::endl;
  return kExitOk;
}

struct DatasetOpts {
  std::string checkpoint;
  std::uint64_t seed_begin = 1000;
  std::size_t prompts = 200;
  std::size_t tokens = DatasetSpec{}.tokens_per_prompt;
  std::size_t positions = DatasetSpec{}.positions_per_prompt;
  double validation = DatasetSpec{}.validation_fraction;
  std::string name = "dataset.kvzd";
};

int run_gen_dataset(const Globals& g, const DatasetOpts& o, const json& echo) {
  const auto w = load_checkpoint(o.checkpoint);
  DatasetSpec spec;
  spec.tokens_per_prompt = o.tokens;
  spec.positions_per_prompt = o.positions;
  spec.validation_fraction = o.validation;
  spec.workers = g.pool();
  const auto seeds = seed_range(o.seed_begin, o.prompts);
  const auto d = generate_dataset(w, std::span<const std::uint64_t>(seeds), spec);
  const auto out = g.out();
  fs::create_directories(out);
  echo_config(out, "gen-dataset", echo);
  save_dataset(d, out / o.name);
  std::cout << json{{"dataset", (out / o.name).string()},
                    {"rows_per_layer", d.rows()},
                    {"validation_rows", d.row_indices(true).size()}}
                   .dump()
            << std::endl;
  return kExitOk;
}

struct SurrogateOpts {
  std::string dataset;
  std::string kind = "mlp";
  double lambda = kDefaultRidge;
  int hidden = 0;
  double lr = AdamHyper{}.lr;
  std::size_t batch = MlpHyper{}.batch;
  std::size_t epochs = MlpHyper{}.max_epochs;
  std::size_t patience = MlpHyper{}.patience;
  std::string name;
};

int run_train_surrogate(const Globals& g, const SurrogateOpts& o, const json& echo) {
  const auto d = load_dataset(o.dataset);
  const SurrogateKind kind = surrogate_kind_from_string(o.kind);
  Surrogate s;
  if (kind == SurrogateKind::linear) {
    s = train_linear(d, o.lambda);
  } else {
    MlpHyper h;
    h.hidden = o.hidden;
    h.adam.lr = o.lr;
    h.batch = o.batch;
    h.max_epochs = o.epochs;
    h.patience = o.patience;
    h.seed = g.seed;
    s = train_mlp(d, h);
  }
  const auto r2 = evaluate_r2(s, d);
  const auto out = g.out();
  fs::create_directories(out);
  echo_config(out, "train-surrogate", echo);
  const std::string name = o.name.empty() ? "surrogate-" + o.kind + ".kvzp" : o.name;
  save_surrogate(s, out / name);
  std::ostringstream csv;
  write_r2_csv(csv, r2);
  write_text(out / ("r2-" + o.kind + ".csv"), csv.str());
  json layers = json::array();
  for (int l = 0; l < d.layers; ++l) layers.push_back(r2.layer_mean(l));
  std::cout << json{{"surrogate", (out / name).string()}, {"r2_mean", r2.mean}, {"r2_per_layer", layers}}.dump()
            << std::endl;
  return kExitOk;
}

struct TaskOpts {
  std::string task = "copy";
  std::size_t tasks = 20;
  std::size_t size = 48;
  std::size_t repeat_block = 0;
  std::uint64_t task_seed = 0;

  TaskSetSpec spec() const { return {task_kind_from_string(task), task_seed, tasks, size, repeat_block}; }
};

void add_task_options(CLI::App* sub, TaskOpts& t) {
  sub->add_option("--task", t.task, "copy | kv_lookup")->check(CLI::IsMember({"copy", "kv_lookup"}));
  sub->add_option("--tasks", t.tasks, "number of tasks");
  sub->add_option("--size", t.size, "copy data length or kv_lookup pair count");
  sub->add_option("--repeat-block", t.repeat_block, "copy only: data is a repeated block of this length");
  sub->add_option("--task-seed", t.task_seed, "base seed of the task set");
}

struct EvalOpts {
  std::string checkpoint;
  std::string surrogate;
  std::string policy;
  TaskOpts task;
};

Policy resolve_policy(const json& j, const std::string& surrogate_override) {
  Policy p = policy_from_json(j);
  if (!surrogate_override.empty()) p.surrogate_path = surrogate_override;
  if (p.uses_surrogate()) {
    require(!p.surrogate_path.empty(), ErrorKind::config, to_string(p.kind) + " needs a surrogate");
    p.surrogate = load_surrogate_ptr(p.surrogate_path);
  }
  return p;
}

template <typename T>
int run_eval(const Globals& g, const EvalOpts& o, const json& echo) {
  json pj;
  try {
    pj = json::parse(read_file(o.policy));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, o.policy + ": " + e.what());
  }
  const Policy policy = resolve_policy(pj, o.surrogate);
  const auto w = load_teacher_as<T>(o.checkpoint);
  const auto tasks = make_tasks(o.task.spec(), static_cast<std::size_t>(w.config.max_seq_len));
  const auto r = evaluate(w, policy, std::span<const Task>(tasks), EvalOptions{g.pool()});
  const auto out = g.out();
  fs::create_directories(out);
  echo_config(out, "eval", echo);
  write_json(out / "eval.json", eval_result_json(r));
  const auto [pname, pvalue] = policy.parameter();
  const SweepRow row{to_string(policy.kind), pname, pvalue, o.task.task_seed, r};
  std::ostringstream csv;
  write_curve_csv(csv, std::span<const SweepRow>(&row, 1));
  write_text(out / "eval.csv", csv.str());
  std::cout << json{{"accuracy", r.accuracy},
                    {"removed_fraction", r.removed_fraction_mean},
                    {"compression_factor", std::isfinite(r.compression_factor()) ? json(r.compression_factor())
                                                                                 : json(nullptr)}}
                   .dump()
            << std::endl;
  return kExitOk;
}

struct SweepOpts {
  std::string checkpoint;
  std::string surrogate;
  std::string family = "kvzap";
  std::vector<double> grid;
  std::size_t window = 16;
  std::uint64_t policy_seed = 0;
  std::string scorer = "kvzip_plus";
  TaskOpts task;
};

template <typename T>
int run_sweep(const Globals& g, const SweepOpts& o, const json& echo) {
  require(!o.grid.empty(), ErrorKind::config, "sweep needs a non-empty --grid");
  const PolicyKind kind = policy_kind_from_string(o.family);
  std::shared_ptr<const Surrogate> s;
  if (kind == PolicyKind::kvzap || kind == PolicyKind::topk_per_head || kind == PolicyKind::topk_per_layer) {
    require(!o.surrogate.empty(), ErrorKind::config, o.family + " sweep needs --surrogate");
    s = load_surrogate_ptr(o.surrogate);
  }
  std::vector<Policy> grid;
  for (double v : o.grid) {
    Policy p;
    switch (kind) {
      case PolicyKind::full: p = Policy::full(); break;
      case PolicyKind::kvzap: p = Policy::kvzap(s, v, o.window); break;
      case PolicyKind::random: p = Policy::random(v, o.policy_seed, o.window); break;
      case PolicyKind::window_only:
        require(v >= 0 && v == std::floor(v), ErrorKind::config, "window_only grid values are window lengths");
        p = Policy::window_only(static_cast<std::size_t>(v));
        break;
      case PolicyKind::topk_per_head: p = Policy::topk_per_head(v, o.window, s); break;
      case PolicyKind::topk_per_layer: p = Policy::topk_per_layer(v, o.window, s); break;
      case PolicyKind::kvzip_budget: p = Policy::kvzip_budget(v, score_kind_from_string(o.scorer)); break;
    }
    p.surrogate_path = o.surrogate;
    grid.push_back(p);
  }
  const std::string bytes = read_file(o.checkpoint);
  const auto w = decode_checkpoint(bytes).template cast<T>();
  const auto tasks = make_tasks(o.task.spec(), static_cast<std::size_t>(w.config.max_seq_len));
  const auto rows = sweep(w, std::span<const Policy>(grid), std::span<const Task>(tasks), o.task.task_seed,
                          EvalOptions{g.pool()});
  const auto out = g.out();
  fs::create_directories(out);
  echo_config(out, "sweep", echo);
  std::ostringstream csv;
  write_curve_csv(csv, std::span<const SweepRow>(rows));
  write_text(out / "curve.csv", csv.str());
  json points = json::array();
  for (const auto& r : rows) points.push_back(eval_result_json(r.result));
  write_json(out / "sweep.summary.json", json{{"config", echo},
                                              {"checkpoint", o.checkpoint},
                                              {"checkpoint_hash", content_hash(bytes)},
                                              {"created", utc_timestamp()},
                                              {"points", points}});
  std::cout << json{{"curve", (out / "curve.csv").string()}, {"points", rows.size()}}.dump() << std::endl;
  return kExitOk;
}

struct OverheadOpts {
  bool paper_table = false;
  std::vector<std::string> specs;
  std::string csv;
};

ArchSpec parse_spec(const std::string& s) {
  // name,H_Q,H,D,D_h,D_int
  std::vector<std::string> parts;
  std::stringstream ss(s);
  for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
  require(parts.size() == 6, ErrorKind::config, "--spec expects name,H_Q,H,D,D_h,D_int");
  ArchSpec a;
  a.name = parts[0];
  try {
    a.query_heads = std::stoull(parts[1]);
    a.kv_heads = std::stoull(parts[2]);
    a.head_dim = std::stoull(parts[3]);
    a.hidden_dim = std::stoull(parts[4]);
    a.ffn_dim = std::stoull(parts[5]);
  } catch (const std::exception&) {
    throw Error(ErrorKind::config, "--spec dimensions must be non-negative integers: " + s);
  }
  a.validate();
  return a;
}

int run_overhead(const Globals& g, const OverheadOpts& o) {
  std::vector<ArchSpec> specs;
  if (o.paper_table || o.specs.empty())
    for (const auto& r : paper_rows()) specs.push_back(r.spec);
  for (const auto& s : o.specs) specs.push_back(parse_spec(s));
  write_overhead_table(std::cout, specs);
  if (!o.csv.empty()) {
    std::ostringstream csv;
    write_overhead_csv(csv, specs);
    write_text(g.out() / o.csv, csv.str());
  }
  if (o.paper_table) {
    const auto bad = overhead_self_test();
    if (!bad.empty()) {
      std::string names;
      for (const auto& b : bad) names += (names.empty() ? "" : ", ") + b;
      return report_error("self_test", "rows deviate from the published table: " + names, kExitSelfTest);
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KV-cache pruning lab: toy teacher, KVzip oracles, surrogate scorers, eviction policies"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Globals g;
  app.add_option("--out", g.out_dir, std::string("output directory (default $") + kOutDirEnv + " or .)");
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--precision", g.precision, "f32 | f64 for scoring and evaluation")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--workers", g.workers, "worker threads (default: available parallelism)");

  TrainTeacherOpts tt;
  auto* c_tt = app.add_subcommand("train-teacher", "train the toy teacher on the copy / kv-lookup mix");
  c_tt->add_option("--model-config", tt.model_config, "model config JSON (L, H_Q, H, D, D_h, D_int, V, T_max, ...)");
  c_tt->add_option("--steps", tt.steps);
  c_tt->add_option("--batch", tt.batch);
  c_tt->add_option("--lr", tt.lr);
  c_tt->add_option("--warmup", tt.warmup);
  c_tt->add_option("--clip", tt.clip);
  c_tt->add_option("--data-seed", tt.data_seed);
  c_tt->add_option("--log-every", tt.log_every);
  c_tt->add_option("--name", tt.name, "checkpoint file name");

  ScoreOpts sc;
  auto* c_sc = app.add_subcommand("score", "KVzip / KVzip+ scores of one prompt");
  c_sc->add_option("--checkpoint", sc.checkpoint)->required()->check(CLI::ExistingFile);
  c_sc->add_option("--prompt-seed", sc.prompt_seed);
  c_sc->add_option("--length", sc.length);
  c_sc->add_option("--prompt-file", sc.prompt_file)->check(CLI::ExistingFile);
  c_sc->add_option("--scorer", sc.scorer)->check(CLI::IsMember({"kvzip", "kvzip_plus"}));

  DatasetOpts ds;
  auto* c_ds = app.add_subcommand("gen-dataset", "build (h, log s+) pairs from a teacher");
  c_ds->add_option("--checkpoint", ds.checkpoint)->required()->check(CLI::ExistingFile);
  c_ds->add_option("--seed-begin", ds.seed_begin);
  c_ds->add_option("--prompts", ds.prompts);
  c_ds->add_option("--tokens", ds.tokens);
  c_ds->add_option("--positions", ds.positions);
  c_ds->add_option("--validation", ds.validation);
  c_ds->add_option("--name", ds.name);

  SurrogateOpts so;
  auto* c_so = app.add_subcommand("train-surrogate", "fit a linear or MLP surrogate and report R^2");
  c_so->add_option("--dataset", so.dataset)->required()->check(CLI::ExistingFile);
  c_so->add_option("--kind", so.kind)->check(CLI::IsMember({"linear", "mlp"}));
  c_so->add_option("--lambda", so.lambda);
  c_so->add_option("--hidden", so.hidden);
  c_so->add_option("--lr", so.lr);
  c_so->add_option("--batch", so.batch);
  c_so->add_option("--epochs", so.epochs);
  c_so->add_option("--patience", so.patience);
  c_so->add_option("--name", so.name);

  EvalOpts ev;
  auto* c_ev = app.add_subcommand("eval", "evaluate one policy on a task set");
  c_ev->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--surrogate", ev.surrogate)->check(CLI::ExistingFile);
  c_ev->add_option("--policy", ev.policy, "policy JSON file")->required()->check(CLI::ExistingFile);
  add_task_options(c_ev, ev.task);

  SweepOpts sw;
  auto* c_sw = app.add_subcommand("sweep", "evaluate a policy family over a parameter grid");
  c_sw->add_option("--checkpoint", sw.checkpoint)->required()->check(CLI::ExistingFile);
  c_sw->add_option("--surrogate", sw.surrogate)->check(CLI::ExistingFile);
  c_sw->add_option("--family", sw.family)
      ->check(CLI::IsMember(
          {"full", "kvzap", "random", "window_only", "topk_per_head", "topk_per_layer", "kvzip_budget"}));
  c_sw->add_option("--grid", sw.grid, "tau, ratio or window values")->delimiter(',');
  c_sw->add_option("--window", sw.window);
  c_sw->add_option("--policy-seed", sw.policy_seed);
  c_sw->add_option("--scorer", sw.scorer)->check(CLI::IsMember({"kvzip", "kvzip_plus"}));
  add_task_options(c_sw, sw.task);
  sw.grid.clear();

  OverheadOpts ov;
  auto* c_ov = app.add_subcommand("overhead", "surrogate compute overhead relative to one transformer layer");
  c_ov->add_flag("--paper-table", ov.paper_table, "print the published rows and self-test them");
  c_ov->add_option("--spec", ov.specs, "name,H_Q,H,D,D_h,D_int (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  c_ov->add_option("--csv", ov.csv, "also write CSV to this file under the output directory");

  for (auto* sub : {c_tt, c_sc, c_ds, c_so, c_ev, c_sw, c_ov})
    sub->add_option("--config", g.config_file, "JSON file of option values (keys are long option names)");

  try {
    // Two passes when a subcommand carries --config: the file's values are
    // spliced in ahead of the explicit arguments so the latter override them.
    std::vector<std::string> args(argv + 1, argv + argc);
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    if (!g.config_file.empty()) {
      CLI::App* sub = app.get_subcommands().front();
      auto extra = expand_config(*sub, g.config_file);
      const auto pos = std::find(args.begin(), args.end(), sub->get_name());
      args.insert(pos + 1, extra.begin(), extra.end());
      sw.grid.clear();
      ov.specs.clear();
      app.clear();
      app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("config", e.what(), kExitConfig);
  } catch (const Error& e) {
    return report_error(to_string(e.kind()), e.what(), exit_code_for(e.kind()));
  }

  CLI::App* sub = app.get_subcommands().front();
  json echo = options_json(*sub);
  echo["seed"] = g.seed;
  echo["precision"] = g.precision;
  const bool f64 = g.precision == "f64";
  try {
    if (sub == c_tt) return run_train_teacher(g, tt, echo);
    if (sub == c_sc) return f64 ? run_score<double>(g, sc, echo) : run_score<float>(g, sc, echo);
    if (sub == c_ds) return run_gen_dataset(g, ds, echo);
    if (sub == c_so) return run_train_surrogate(g, so, echo);
    if (sub == c_ev) return f64 ? run_eval<double>(g, ev, echo) : run_eval<float>(g, ev, echo);
    if (sub == c_sw) return f64 ? run_sweep<double>(g, sw, echo) : run_sweep<float>(g, sw, echo);
    if (sub == c_ov) return run_overhead(g, ov);
  } catch (const Error& e) {
    return report_error(to_string(e.kind()), e.what(), exit_code_for(e.kind()));
  } catch (const json::exception& e) {
    return report_error("config", e.what(), kExitConfig);
  } catch (const std::exception& e) {
    return report_error("io", e.what(), kExitValidation);
  }
  return kExitConfig;
}
