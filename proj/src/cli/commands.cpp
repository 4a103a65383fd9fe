#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <unistd.h>

#include "dbr/cli/cli.hpp"
#include "dbr/core/gradcheck.hpp"
#include "dbr/core/random.hpp"
#include "dbr/errors.hpp"
#include "dbr/io/container.hpp"

namespace dbr::cli {

namespace fs = std::filesystem;
using models::ModelKind;

namespace {

std::string text_of(const KeyValues& kv) {
  std::string s;
  for (const auto& [k, v] : kv) s += k + " = " + v + "\n";
  return s;
}

RunConfig run_config(const Invocation& inv) {
  RunConfig c;
  c.apply(inv.config);
  c.validate();
  return c;
}

std::string option(const Invocation& inv, const std::string& key) {
  auto it = inv.options.find(key);
  if (it == inv.options.end()) throw ConfigError("missing option --" + key);
  return it->second;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  io::write_text_atomic(p, s);
}

std::string file_crc(const fs::path& p) { return io::crc32_hex(io::read_file(p)); }

// ---- commands -------------------------------------------------------------

void cmd_gen(const Invocation& inv, const fs::path& dir, std::ostream& log) {
  const auto spec = parse_synth_spec(text_of(inv.config));
  const auto ds = synth::gen_dataset(spec);
  data::save_trajectories(dir / "trajectories.csv", ds.trajectories, ds.labels);
  data::save_label_map(dir / "labels.csv", ds.labels);
  log << "generated " << ds.trajectories.size() << " trajectories of length " << spec.length
      << " over " << ds.labels.size() << " classes\n";
}

void cmd_prep(const Invocation& inv, const fs::path& dir, std::ostream& log) {
  const auto cfg = run_config(inv);
  const auto labels = data::load_label_map(option(inv, "labels"));
  const auto trajs = data::load_trajectories(inv.inputs.at(0), labels, {cfg.prep.degrees});
  const auto ds = data::prepare(trajs, labels, cfg.prep);
  data::save_prepared(dir / "prepared.bin", ds);
  const auto table = data::format_stage_table(ds);
  write_text(dir / "stages.txt", table);
  log << table;
}

void cmd_train(const Invocation& inv, const fs::path& dir, std::ostream& log) {
  const auto cfg = run_config(inv);
  const auto kind = models::parse_model_kind(option(inv, "model"));
  const auto ds = data::load_prepared(inv.inputs.at(0));
  const auto t0 = std::chrono::steady_clock::now();
  auto progress = [&](const train::EpochRecord& e) {
    log << "epoch " << e.epoch << "/" << cfg.train.epochs << "  loss " << fixed4(e.loss) << "  lr "
        << e.lr << "  " << std::setprecision(3) << e.seconds << "s\n" << std::setprecision(6);
  };
  auto r = train::train_on(kind, cfg.train, ds, cfg.prep.resample, cfg.net, progress);
  train::save_checkpoint(dir / "checkpoint.bin", r.classifier);
  write_text(dir / "train_log.tsv", r.log.to_tsv(false));
  if (!r.log.hmm_traces.empty()) {
    std::ostringstream os;
    os << "class\titeration\tloglik\n";
    for (std::size_t c = 0; c < r.log.hmm_traces.size(); ++c)
      for (std::size_t i = 0; i < r.log.hmm_traces[c].size(); ++i)
        os << ds.split.class_names[c] << '\t' << i << '\t' << exact(r.log.hmm_traces[c][i]) << '\n';
    write_text(dir / "hmm_traces.tsv", os.str());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log << "trained " << models::to_string(kind) << " on " << ds.training_set(cfg.prep.resample).size()
      << " samples in " << std::setprecision(3) << secs << "s\n" << std::setprecision(6);
}

void write_report(const fs::path& dir, const metrics::EvalReport& rep) {
  write_text(dir / "metrics.tsv", metrics::format_metrics_tsv(rep));
  write_text(dir / "per_class.txt", metrics::format_table(rep));
  write_text(dir / "report.json", rep.to_json().dump(2) + "\n");
  write_text(dir / "confusion.svg", metrics::confusion_svg(rep));
  write_text(dir / "per_class.svg", metrics::per_class_svg(rep));
}

void cmd_eval(const Invocation& inv, const fs::path& dir, std::ostream& log) {
  const auto ds = data::load_prepared(option(inv, "data"));
  if (inv.inputs.empty()) throw ConfigError("eval needs at least one checkpoint");
  std::vector<std::pair<std::string, metrics::EvalReport>> reports;
  std::map<std::string, int> used;
  for (const auto& path : inv.inputs) {
    const auto model = train::load_checkpoint(path);
    auto rep = train::evaluate(model, ds.split.test, ds.split.class_names);
    std::string name(models::to_string(model.kind));
    if (int n = ++used[name]; n > 1) name += "-" + std::to_string(n);
    reports.emplace_back(name, std::move(rep));
  }
  if (reports.size() == 1) {
    write_report(dir, reports[0].second);
    log << metrics::format_table(reports[0].second);
    return;
  }
  for (const auto& [name, rep] : reports) write_report(dir / name, rep);
  write_text(dir / "comparison.tsv", metrics::format_comparison_tsv(reports));
  const auto table = metrics::format_comparison(reports);
  write_text(dir / "comparison.txt", table);
  log << table;
}

void cmd_ablate(const Invocation& inv, const fs::path& dir, std::ostream& log) {
  const auto cfg = run_config(inv);
  const auto ds = data::load_prepared(inv.inputs.at(0));
  const auto ab = run_ablation(ds, cfg, &log);
  write_text(dir / "ablation.tsv", ab.format_tsv());
  const auto table = ab.format_table();
  write_text(dir / "ablation.txt", table);
  log << table;
}

void cmd_gradcheck(const Invocation& inv, const fs::path& dir, std::ostream& log) {
  const auto rows = run_gradcheck(std::stoull(option(inv, "seed")));
  std::ostringstream tsv;
  tsv << "model\tmax_rel_error\tchecked\n";
  bool ok = true;
  for (const auto& r : rows) {
    tsv << r.model << '\t' << exact(r.max_rel_error) << '\t' << r.checked << '\n';
    log << std::left << std::setw(8) << r.model << " max relative error " << std::scientific
        << std::setprecision(3) << r.max_rel_error << std::defaultfloat << std::setprecision(6)
        << "  (" << r.checked << " components)\n";
    ok = ok && r.max_rel_error < kGradcheckTolerance;
  }
  write_text(dir / "gradcheck.tsv", tsv.str());
  if (!ok) throw NumericalError("gradient check above tolerance 1e-5");
}

void dispatch(const Invocation& inv, const fs::path& dir, std::ostream& log) {
  const auto& c = inv.command;
  if (c == "gen") cmd_gen(inv, dir, log);
  else if (c == "prep") cmd_prep(inv, dir, log);
  else if (c == "train") cmd_train(inv, dir, log);
  else if (c == "eval") cmd_eval(inv, dir, log);
  else if (c == "ablate") cmd_ablate(inv, dir, log);
  else if (c == "gradcheck") cmd_gradcheck(inv, dir, log);
  else throw ConfigError("unknown command `" + c + "`");
}

std::vector<FileHash> hash_tree(const fs::path& dir) {
  std::vector<FileHash> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    out.push_back({rel, file_crc(e.path())});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

void replace_dir(const fs::path& staging, const fs::path& out) {
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw ConfigError(out.string() + " exists and is not a directory");
    if (!fs::is_empty(out) && !fs::exists(out / "manifest.json"))
      throw ConfigError("refusing to replace " + out.string() + ": it is not an output directory");
    fs::remove_all(out);
  }
  fs::rename(staging, out);
}

}  // namespace

// ---- manifest ---------------------------------------------------------------

nlohmann::json Invocation::to_json() const {
  nlohmann::json cfg = nlohmann::json::array();
  for (const auto& [k, v] : config) cfg.push_back({k, v});
  return {{"command", command}, {"inputs", inputs}, {"options", options}, {"config", cfg}};
}

Invocation Invocation::from_json(const nlohmann::json& j) {
  Invocation inv;
  inv.command = j.at("command").get<std::string>();
  inv.inputs = j.at("inputs").get<std::vector<std::string>>();
  inv.options = j.at("options").get<std::map<std::string, std::string>>();
  for (const auto& kv : j.at("config")) inv.config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
  return inv;
}

namespace {
nlohmann::json hashes_json(const std::vector<FileHash>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& h : v) a.push_back({{"path", h.path}, {"crc32", h.crc32}});
  return a;
}
std::vector<FileHash> hashes_from(const nlohmann::json& a) {
  std::vector<FileHash> v;
  for (const auto& h : a) v.push_back({h.at("path").get<std::string>(), h.at("crc32").get<std::string>()});
  return v;
}
}  // namespace

nlohmann::json Manifest::to_json() const {
  return {{"tool", "dbr"},
          {"tool_version", tool_version},
          {"invocation", invocation.to_json()},
          {"inputs", hashes_json(inputs)},
          {"outputs", hashes_json(outputs)}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.tool_version = j.at("tool_version").get<std::string>();
    m.invocation = Invocation::from_json(j.at("invocation"));
    m.inputs = hashes_from(j.at("inputs"));
    m.outputs = hashes_from(j.at("outputs"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

Manifest execute(const Invocation& inv, const fs::path& out_dir, std::ostream& log) {
  Manifest m;
  m.invocation = inv;
  auto add_input = [&](const std::string& p) {
    m.inputs.push_back({fs::absolute(p).lexically_normal().string(), file_crc(p)});
  };
  for (const auto& p : inv.inputs) add_input(p);
  for (const char* key : {"labels", "data"})
    if (auto it = inv.options.find(key); it != inv.options.end()) add_input(it->second);

  const fs::path out = fs::absolute(out_dir).lexically_normal();
  const fs::path parent = out.has_filename() ? out.parent_path() : out.parent_path().parent_path();
  fs::create_directories(parent);
  const fs::path staging =
      parent / (".dbr-staging-" + out.filename().string() + "-" + std::to_string(::getpid()));
  fs::remove_all(staging);
  fs::create_directories(staging);
  try {
    dispatch(inv, staging, log);
    m.outputs = hash_tree(staging);
    io::write_text_atomic(staging / "manifest.json", m.to_json().dump(2) + "\n");
    replace_dir(staging, out);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  return m;
}

// ---- ablation ---------------------------------------------------------------

std::vector<int> minority_classes(const data::PreparedDataset& ds) {
  const auto h = data::histogram(ds.split.train, ds.num_classes());
  const std::size_t top = h.empty() ? 0 : *std::max_element(h.begin(), h.end());
  std::vector<int> out;
  for (std::size_t c = 0; c < h.size(); ++c)
    if (2 * h[c] < top) out.push_back(int(c));
  return out;
}

const AblationRow& Ablation::mean(bool ros, bool mscnn) const {
  for (const auto& r : rows)
    if (r.seed == "mean" && r.ros == ros && r.mscnn == mscnn) return r;
  throw StateError("ablation has no mean rows");
}

Ablation run_ablation(const data::PreparedDataset& ds, const RunConfig& config, std::ostream* log) {
  Ablation out;
  const auto minority = minority_classes(ds);
  for (int c : minority) out.minority_classes.push_back(ds.split.class_names[std::size_t(c)]);
  const bool grid[4][2] = {{true, true}, {true, false}, {false, true}, {false, false}};
  std::vector<AblationRow> means(4);
  for (std::uint64_t seed : config.ablate_seeds) {
    for (int g = 0; g < 4; ++g) {
      const auto [ros, mscnn] = grid[g];
      auto tc = config.train;
      tc.seed = seed;
      const auto kind = mscnn ? ModelKind::fusion : ModelKind::bilstm;
      const auto t0 = std::chrono::steady_clock::now();
      auto r = train::train_on(kind, tc, ds, ros ? data::Resample::ros : data::Resample::none, config.net);
      const auto rep = train::evaluate(r.classifier, ds.split.test, ds.split.class_names);
      AblationRow row{std::to_string(seed), ros, mscnn, rep.balanced_accuracy, rep.macro_f1,
                      rep.macro_recall, std::nullopt};
      if (!minority.empty()) {
        double s = 0;
        for (int c : minority) s += rep.per_class[std::size_t(c)].recall;
        row.minority_recall = s / double(minority.size());
      }
      out.rows.push_back(row);
      auto& m = means[std::size_t(g)];
      m.seed = "mean";
      m.ros = ros;
      m.mscnn = mscnn;
      const double w = 1.0 / double(config.ablate_seeds.size());
      m.balanced_accuracy += w * row.balanced_accuracy;
      m.macro_f1 += w * row.macro_f1;
      m.macro_recall += w * row.macro_recall;
      if (row.minority_recall) m.minority_recall = m.minority_recall.value_or(0) + w * *row.minority_recall;
      if (log) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        *log << "seed " << seed << (ros ? "  ROS" : "  raw") << (mscnn ? "  Bi-LSTM+MSCNN" : "  Bi-LSTM")
             << "  balanced accuracy " << fixed4(row.balanced_accuracy) << "  (" << std::setprecision(3)
             << secs << "s)\n" << std::setprecision(6);
      }
    }
  }
  out.rows.insert(out.rows.end(), means.begin(), means.end());
  return out;
}

std::string Ablation::format_table() const {
  std::ostringstream os;
  os << std::left << std::setw(6) << "seed" << std::setw(5) << "ROS" << std::setw(16) << "model"
     << std::right << std::setw(10) << "bal.acc" << std::setw(10) << "macroF1" << std::setw(10)
     << "recall" << std::setw(12) << "minority" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(6) << r.seed << std::setw(5) << (r.ros ? "yes" : "no") << std::setw(16)
       << (r.mscnn ? "Bi-LSTM+MSCNN" : "Bi-LSTM") << std::right << std::setw(10)
       << fixed4(r.balanced_accuracy) << std::setw(10) << fixed4(r.macro_f1) << std::setw(10)
       << fixed4(r.macro_recall) << std::setw(12)
       << (r.minority_recall ? fixed4(*r.minority_recall) : std::string("-")) << '\n';
  }
  os << "minority classes:";
  for (const auto& c : minority_classes) os << ' ' << c;
  os << (minority_classes.empty() ? " none\n" : "\n");
  return os.str();
}

std::string Ablation::format_tsv() const {
  std::ostringstream os;
  os << "seed\tros\tmscnn\tbalanced_accuracy\tmacro_f1\tmacro_recall\tminority_recall\n";
  for (const auto& r : rows) {
    os << r.seed << '\t' << (r.ros ? 1 : 0) << '\t' << (r.mscnn ? 1 : 0) << '\t'
       << exact(r.balanced_accuracy) << '\t' << exact(r.macro_f1) << '\t' << exact(r.macro_recall)
       << '\t' << (r.minority_recall ? exact(*r.minority_recall) : std::string("nan")) << '\n';
  }
  return os.str();
}

// ---- gradient check -----------------------------------------------------------

std::vector<GradcheckRow> run_gradcheck(std::uint64_t seed, std::size_t num_classes) {
  std::vector<GradcheckRow> out;
  const ModelKind kinds[] = {ModelKind::fusion, ModelKind::bilstm, ModelKind::lstm, ModelKind::conv1d};
  for (std::size_t k = 0; k < 4; ++k) {
    models::NetConfig cfg;
    cfg.kind = kinds[k];
    cfg.num_classes = num_classes;
    models::Network<double> net(cfg, core::derive_seed(seed, {k, 1}));
    core::Rng rng(core::derive_seed(seed, {k, 2}));
    // Move off the initialization so biases and symmetric terms are exercised.
    for (auto& p : net.parameters())
      for (auto& v : p.value.values()) v += core::uniform(rng, -0.1, 0.1);
    core::Tensor<double> x({3, data::kWindowSize, data::kFeatureCount});
    core::fill_uniform(x, rng, -1, 1);
    std::vector<int> labels;
    for (int i = 0; i < 3; ++i) labels.push_back(int(core::uniform_index(rng, num_classes)));
    auto ptrs = net.parameter_ptrs();
    core::GradCheckOptions opt;
    opt.seed = core::derive_seed(seed, {k, 3});
    const auto r = core::grad_check(
        [&](core::Tape<double>& t) {
          return core::softmax_cross_entropy<double>(t, net.forward(t, t.constant(x)), labels);
        },
        ptrs, opt);
    out.push_back({std::string(models::to_string(kinds[k])), r.max_rel_error, r.checked});
  }
  return out;
}

}  // namespace dbr::cli
