#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

fs::path scratch_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("kvzap_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

Run run(const std::string& args, const std::string& env = "") {
  const auto out = scratch_dir() / "stdout.txt", err = scratch_dir() / "stderr.txt";
  const std::string cmd = env + " " + KVZAP_CLI + std::string(" ") + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

nlohmann::json error_json(const Run& r) { return nlohmann::json::parse(r.err.substr(r.err.rfind('{'))); }

}  // namespace

TEST(Cli, OverheadPaperTable) {
  const auto r = run("overhead --paper-table");
  EXPECT_EQ(r.code, 0) << r.err;
  for (const char* s : {"Qwen3-8B", "Llama-3.1-8B", "Qwen3-32B", "1.09%", "0.96%", "0.67%", "0.02%", "0.01%"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
}

TEST(Cli, OverheadCustomSpecAndEnvOutputDir) {
  const auto dir = scratch_dir() / "envout";
  const auto r = run("overhead --spec toy,4,2,16,64,128 --csv o.csv", "KVZAP_OUT_DIR=" + dir.string());
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "o.csv"));
  const auto other = scratch_dir() / "flagout";
  EXPECT_EQ(run("--out " + other.string() + " overhead --csv o.csv", "KVZAP_OUT_DIR=" + dir.string()).code, 0);
  EXPECT_TRUE(fs::exists(other / "o.csv"));
  const auto bad = run("overhead --spec toy,4,2");
  EXPECT_EQ(bad.code, 2);
  EXPECT_EQ(error_json(bad)["error"], "config");
  EXPECT_EQ(error_json(bad)["exit_code"], 2);
}

TEST(Cli, ParseAndConfigErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("bogus").code, 2);
  EXPECT_EQ(run("overhead --nope").code, 2);
  EXPECT_EQ(run("eval --checkpoint /nonexistent --policy /nonexistent").code, 2);
  const auto cfg = scratch_dir() / "bad_config.json";
  write(cfg, R"({"paper-table": true, "colour": 3})");
  const auto r = run("overhead --config " + cfg.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(error_json(r)["message"].get<std::string>().find("colour"), std::string::npos);
  write(cfg, R"({"paper-table": true})");
  EXPECT_EQ(run("overhead --config " + cfg.string()).code, 0);
}

TEST(Cli, CorruptInputsExitThree) {
  const auto bad = scratch_dir() / "garbage.kvzl";
  write(bad, "not a checkpoint");
  const auto r = run("score --checkpoint " + bad.string());
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(error_json(r)["error"], "format");
}

TEST(Cli, Pipeline) {
  const auto d = scratch_dir() / "pipe";
  const std::string out = "--out " + d.string() + " --workers 2 ";
  auto r = run(out + "--seed 3 train-teacher --steps 4 --batch 4 --log-every 2");
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(d / "teacher.kvzl"));
  EXPECT_TRUE(fs::exists(d / "loss.csv"));
  EXPECT_TRUE(fs::exists(d / "train-teacher.config.json"));
  const std::string ckpt = " --checkpoint " + (d / "teacher.kvzl").string();

  r = run(out + "score" + ckpt + " --length 10 --scorer kvzip");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d / "scores.kvzs"));
  r = run(out + "--precision f64 score" + ckpt + " --length 300");
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(error_json(r)["error"], "capacity");

  r = run(out + "gen-dataset" + ckpt + " --prompts 10 --tokens 12 --positions 4");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string ds = " --dataset " + (d / "dataset.kvzd").string();
  ASSERT_EQ(run(out + "train-surrogate" + ds + " --kind linear").code, 0);
  r = run(out + "train-surrogate" + ds + " --kind mlp --epochs 2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d / "r2-mlp.csv"));
  EXPECT_EQ(run(out + "gen-dataset" + ckpt + " --prompts 2 --tokens 4 --positions 5").code, 3);

  const auto pol = d / "policy.json";
  write(pol, R"({"policy":"kvzap","tau":-4.0,"window":4,"surrogate":")" + (d / "surrogate-mlp.kvzp").string() + "\"}");
  r = run(out + "eval" + ckpt + " --policy " + pol.string() + " --tasks 2 --size 8");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = nlohmann::json::parse(slurp(d / "eval.json"));
  EXPECT_EQ(ev["n_tasks"], 2);
  EXPECT_EQ(ev["policy"]["policy"], "kvzap");
  write(pol, R"({"policy":"kvzap","tau":-4.0,"windw":4})");
  EXPECT_EQ(run(out + "eval" + ckpt + " --policy " + pol.string()).code, 2);
  write(pol, R"({"policy":"kvzip_budget","ratio":0.5})");
  EXPECT_EQ(run(out + "eval" + ckpt + " --policy " + pol.string() + " --tasks 2 --size 8").code, 0);

  r = run(out + "sweep" + ckpt + " --surrogate " + (d / "surrogate-linear.kvzp").string() +
          " --family kvzap --grid -6,-3,0 --tasks 2 --size 8");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = nlohmann::json::parse(slurp(d / "sweep.summary.json"));
  EXPECT_EQ(summary["points"].size(), 3u);
  EXPECT_EQ(summary["checkpoint_hash"].get<std::string>().size(), 40u);
  EXPECT_EQ(run(out + "sweep" + ckpt + " --family kvzap --grid -3").code, 2);
  EXPECT_EQ(run(out + "sweep" + ckpt + " --family window_only --grid 2.5").code, 2);
}
