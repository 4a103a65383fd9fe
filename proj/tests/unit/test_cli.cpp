#include <fstream>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "dbr/cli/cli.hpp"
#include "dbr/errors.hpp"
#include "dbr/io/container.hpp"

using namespace dbr;
using namespace dbr::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result dbr_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dbr_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string s(const fs::path& p) { return p.string(); }

// Small three-class dataset through gen + prep.
fs::path make_prepared(const fs::path& dir, const std::string& classes = "USD,SA,OFL") {
  fs::create_directories(dir);
  std::string spec = "length = 10\nnoise = 0.5\nseed = 4\n";
  std::stringstream ss(classes);
  for (std::string c; std::getline(ss, c, ',');) spec += "count." + c + " = 15\n";
  write(dir / "spec.txt", spec);
  write(dir / "small.cfg", "min_class_count = 10\nepochs = 2\nbatch_size = 64\nablate_seeds = 5\n");
  REQUIRE(dbr_run({"gen", s(dir / "spec.txt"), "--out", s(dir / "gen")}).code == 0);
  REQUIRE(dbr_run({"prep", s(dir / "gen" / "trajectories.csv"), "--config", s(dir / "small.cfg"),
                   "--out", s(dir / "prep")})
              .code == 0);
  return dir / "prep" / "prepared.bin";
}

}  // namespace

TEST_CASE("key-value configuration files") {
  auto kv = parse_key_values("# comment\n a = 1 \n\nb=two # trailing\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"a", "1"});
  CHECK(kv[1].second == "two");
  CHECK_THROWS_WITH_AS(parse_key_values("a = 1\nbroken\n"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_key_values("a = 1\na = 2\n"), doctest::Contains("given twice"), ConfigError);

  RunConfig c;
  CHECK_THROWS_AS(c.set("learning_rate", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("epochs", "-3"), ConfigError);
  CHECK_THROWS_AS(c.set("normalize", "maybe"), ConfigError);
  c.set("kernel_sizes", "2, 3");
  c.set("seed", "11");
  CHECK(c.net.kernel_sizes == std::vector<std::size_t>{2, 3});
  CHECK(c.prep.seed == 11);
  CHECK(c.train.seed == 11);
  RunConfig d;
  d.apply(c.items());
  CHECK(d.items() == c.items());
}

TEST_CASE("default configuration carries the published values and flags the rest") {
  const auto r = dbr_run({"config"});
  CHECK(r.code == 0);
  RunConfig parsed;
  parsed.apply(parse_key_values(r.out));
  CHECK(parsed.items() == RunConfig{}.items());
  for (const char* line : {"epochs = 60\n", "batch_size = 256\n", "lr_initial = 0.005\n",
                           "lr_after = 0.001\n", "lr_switch_epoch = 40\n", "lstm_layers = 2\n",
                           "lstm_hidden = 64\n", "kernel_sizes = 2,3,4\n", "channels_per_kernel = 32\n",
                           "hmm_states = 7\n", "min_length = 7\n", "min_class_count = 100\n",
                           "train_ratio = 0.8\n", "resample = ros\n"}) {
    CHECK(r.out.find(line) != std::string::npos);
  }
  std::regex silent("\n(\\w+) = [^\n#]*# unpublished");
  std::size_t n = 0;
  for (auto it = std::sregex_iterator(r.out.begin(), r.out.end(), silent); it != std::sregex_iterator(); ++it) {
    CHECK(is_unpublished((*it)[1].str()));
    ++n;
  }
  CHECK(n == 11);
}

TEST_CASE("gen is deterministic and atomic") {
  const auto dir = fresh_dir("gen");
  write(dir / "spec.txt", "length = 8\ncount.USD = 3\ncount.S = 2\n");
  CHECK(dbr_run({"gen", s(dir / "spec.txt"), "--out", s(dir / "a")}).code == 0);
  CHECK(dbr_run({"gen", s(dir / "spec.txt"), "--out", s(dir / "b")}).code == 0);
  CHECK(read(dir / "a" / "trajectories.csv") == read(dir / "b" / "trajectories.csv"));
  CHECK(read(dir / "a" / "manifest.json") == read(dir / "b" / "manifest.json"));
  CHECK(dbr_run({"gen", s(dir / "spec.txt"), "--seed", "9", "--out", s(dir / "c")}).code == 0);
  CHECK(read(dir / "a" / "trajectories.csv") != read(dir / "c" / "trajectories.csv"));

  write(dir / "bad.txt", "count.USD = 3\ncount.FLY = 1\n");
  auto r = dbr_run({"gen", s(dir / "bad.txt"), "--out", s(dir / "bad")});
  CHECK(r.code == 2);
  CHECK(r.err.find("FLY") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "bad"));
  for (const auto& e : fs::directory_iterator(dir))
    CHECK(e.path().filename().string().rfind(".dbr-staging", 0) != 0);

  // A directory that is not an output directory is never replaced.
  fs::create_directories(dir / "keep");
  write(dir / "keep" / "notes.txt", "mine");
  CHECK(dbr_run({"gen", s(dir / "spec.txt"), "--out", s(dir / "keep")}).code == 2);
  CHECK(read(dir / "keep" / "notes.txt") == "mine");
  // A previous output directory is.
  CHECK(dbr_run({"gen", s(dir / "spec.txt"), "--out", s(dir / "a")}).code == 0);
}

TEST_CASE("prep reports stage counts") {
  const auto dir = fresh_dir("prep");
  write(dir / "labels.csv", "class_index,class_name\n0,A\n1,B\n");
  std::string csv = "agent_id,kind,frame,x,y,z,d,label\n";
  for (int k = 0; k < 7; ++k) csv += "a1,vehicle," + std::to_string(k) + ",1,2,0,0.1,A\n";
  for (int k = 0; k < 6; ++k) csv += "a2,vehicle," + std::to_string(k) + ",1,2,0,0.1,B\n";
  for (int k = 0; k < 9; ++k) csv += "a3,vehicle," + std::to_string(k) + ",1,2,0,0.1,B\n";
  write(dir / "traj.csv", csv);
  write(dir / "p.cfg", "min_class_count = 1\n");
  auto r = dbr_run({"prep", s(dir / "traj.csv"), "--config", s(dir / "p.cfg"), "--out", s(dir / "out")});
  REQUIRE(r.code == 0);
  const auto stages = read(dir / "out" / "stages.txt");
  CHECK(std::regex_search(stages, std::regex("\ntrajectories_after_length_filter +2\n")));
  CHECK(std::regex_search(stages, std::regex("\nwindows +8 +3 +5\n")));
  // ROS: flat training histogram.
  std::smatch m;
  REQUIRE(std::regex_search(stages, m, std::regex("\ntrain_ros +\\d+ +(\\d+) +(\\d+)\n")));
  CHECK(m[1] == m[2]);

  write(dir / "broken.csv", "agent_id,kind,frame,x,y,z,d,label\na,vehicle,0,1,2,0,zero,A\n");
  r = dbr_run({"prep", s(dir / "broken.csv"), "--out", s(dir / "out2")});
  CHECK(r.code == 3);
  CHECK(r.err.find("row 2") != std::string::npos);
  CHECK(dbr_run({"prep", s(dir / "traj.csv"), "--resample", "smote", "--out", s(dir / "o3")}).code == 2);
}

TEST_CASE("train, eval and replay") {
  const auto dir = fresh_dir("train");
  const auto prepared = make_prepared(dir);
  const auto cfg = s(dir / "small.cfg");
  for (const char* model : {"fusion", "lstm", "conv1d", "hmm"}) {
    auto r = dbr_run({"train", s(prepared), "--model", model, "--config", cfg, "--seed", "2", "--out",
                      s(dir / model)});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / model / "checkpoint.bin"));
  }
  auto hmm = train::load_checkpoint(dir / "hmm" / "checkpoint.bin");
  const auto* hc = std::get_if<hmm::HmmClassifier>(&hmm.impl);
  REQUIRE(hc != nullptr);
  CHECK(hc->num_classes() == 3);
  for (const auto& m : hc->models()) CHECK(m->n_states == 7);
  CHECK(fs::exists(dir / "hmm" / "hmm_traces.tsv"));

  CHECK(dbr_run({"train", s(prepared), "--model", "svm", "--out", s(dir / "x")}).code == 2);
  CHECK(dbr_run({"train", s(prepared), "--model", "fusion", "--precision", "half", "--out",
                 s(dir / "x")}).code == 2);
  CHECK_FALSE(fs::exists(dir / "x"));

  // Single checkpoint: metrics files match the library to full precision.
  REQUIRE(dbr_run({"eval", s(dir / "hmm" / "checkpoint.bin"), "--data", s(prepared), "--out",
                   s(dir / "eval_hmm")}).code == 0);
  const auto ds = data::load_prepared(prepared);
  const auto rep = train::evaluate(hmm, ds.split.test, ds.split.class_names);
  const auto tsv = read(dir / "eval_hmm" / "metrics.tsv");
  std::smatch m;
  REQUIRE(std::regex_search(tsv, m, std::regex("balanced_accuracy\t([^\n]+)")));
  CHECK(std::stod(m[1]) == rep.balanced_accuracy);
  CHECK(metrics::EvalReport::from_json(nlohmann::json::parse(read(dir / "eval_hmm" / "report.json"))) == rep);
  for (const char* f : {"per_class.txt", "confusion.svg", "per_class.svg"})
    CHECK(fs::exists(dir / "eval_hmm" / f));

  // Several checkpoints: comparison table with one row per model.
  std::vector<std::string> args{"eval"};
  for (const char* model : {"fusion", "lstm", "conv1d", "hmm"}) args.push_back(s(dir / model / "checkpoint.bin"));
  for (const char* a : {"--data", "", "--out", ""}) args.push_back(a);
  args[args.size() - 3] = s(prepared);
  args.back() = s(dir / "cmp");
  auto r = dbr_run(args);
  REQUIRE(r.code == 0);
  const auto cmp = read(dir / "cmp" / "comparison.tsv");
  for (const char* model : {"fusion\t", "lstm\t", "conv1d\t", "hmm\t"}) CHECK(cmp.find(model) != std::string::npos);
  CHECK(std::count(cmp.begin(), cmp.end(), '\n') == 5);

  // Replays reproduce every hashed output, checkpoints included.
  for (const char* out : {"fusion", "hmm", "cmp"}) {
    auto rr = dbr_run({"replay", s(dir / out / "manifest.json"), "--out", s(dir / (std::string(out) + "_again"))});
    INFO(out << ": " << rr.err);
    CHECK(rr.code == 0);
  }
  CHECK(read(dir / "fusion" / "checkpoint.bin") == read(dir / "fusion_again" / "checkpoint.bin"));
}

TEST_CASE("eval rejects a checkpoint for other classes") {
  const auto dir = fresh_dir("mismatch");
  const auto a = make_prepared(dir / "a", "USD,SA,OFL");
  const auto b = make_prepared(dir / "b", "USD,SA,S");
  REQUIRE(dbr_run({"train", s(b), "--model", "conv1d", "--config", s(dir / "b" / "small.cfg"), "--out",
                   s(dir / "m")}).code == 0);
  auto r = dbr_run({"eval", s(dir / "m" / "checkpoint.bin"), "--data", s(a), "--out", s(dir / "e")});
  CHECK(r.code == 3);
  CHECK(r.err.find("differ") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "e"));

  // A changed input makes a replay fail instead of silently differing.
  auto manifest = dir / "m" / "manifest.json";
  std::ofstream(b, std::ios::app) << "x";
  CHECK(dbr_run({"replay", s(manifest), "--out", s(dir / "again")}).code == 3);
}

TEST_CASE("ablation grid") {
  const auto dir = fresh_dir("ablate");
  const auto prepared = make_prepared(dir);
  auto r = dbr_run({"ablate", s(prepared), "--config", s(dir / "small.cfg"), "--seeds", "1,2", "--out",
                    s(dir / "ab")});
  REQUIRE(r.code == 0);
  const auto tsv = read(dir / "ab" / "ablation.tsv");
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 1 + 2 * 4 + 4);
  for (const char* row : {"\n1\t1\t1\t", "\n1\t1\t0\t", "\n1\t0\t1\t", "\n1\t0\t0\t", "\n2\t0\t0\t",
                          "\nmean\t1\t1\t", "\nmean\t0\t0\t"})
    CHECK(tsv.find(row) != std::string::npos);
  // Balanced data: no minority classes.
  CHECK(read(dir / "ab" / "ablation.txt").find("minority classes: none") != std::string::npos);
}

TEST_CASE("gradcheck and exit codes") {
  const auto dir = fresh_dir("gradcheck");
  auto r = dbr_run({"gradcheck", "--seed", "3", "--out", s(dir / "gc")});
  CHECK(r.code == 0);
  const auto tsv = read(dir / "gc" / "gradcheck.tsv");
  std::regex row("\n(\\w+)\t([^\t]+)\t(\\d+)");
  std::size_t n = 0;
  for (auto it = std::sregex_iterator(tsv.begin(), tsv.end(), row); it != std::sregex_iterator(); ++it, ++n)
    CHECK(std::stod((*it)[2]) < 1e-5);
  CHECK(n == 4);

  CHECK(dbr_run({}).code == 2);
  CHECK(dbr_run({"fly"}).code == 2);
  CHECK(dbr_run({"--help"}).code == 0);
  CHECK(exit_code(ConfigError("x")) == 2);
  CHECK(exit_code(DataError("x")) == 3);
  CHECK(exit_code(CompatibilityError("x")) == 3);
  CHECK(exit_code(LoadError("x")) == 3);
  CHECK(exit_code(NumericalError("x")) == 4);
}
