#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "dbr/cli/cli.hpp"
#include "dbr/errors.hpp"
#include "dbr/io/container.hpp"

namespace dbr::cli {

namespace fs = std::filesystem;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Flags {
  std::string out, config, model, resample, precision, labels, data, seeds;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> inputs;
};

KeyValues resolve_run_config(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) c.apply(parse_key_values(read_text(f.config)));
  if (f.seed) c.set_seed(*f.seed);
  if (!f.resample.empty()) c.prep.resample = data::parse_resample(f.resample);
  if (!f.precision.empty()) c.train.precision = train::parse_precision(f.precision);
  if (!f.seeds.empty()) c.set("ablate_seeds", f.seeds);
  c.validate();
  return c.items();
}

int replay(const std::string& manifest_path, const std::string& out_dir, std::ostream& out) {
  const auto bytes = io::read_file(manifest_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path + ": " + e.what());
  }
  const auto m = Manifest::from_json(j);
  for (const auto& in : m.inputs) {
    if (io::crc32_hex(io::read_file(in.path)) != in.crc32)
      throw DataError("input " + in.path + " changed since the recorded run");
  }
  std::ostringstream log;
  const auto again = execute(m.invocation, out_dir, log);
  std::vector<std::string> diffs;
  if (again.outputs.size() != m.outputs.size()) diffs.push_back("different set of output files");
  for (std::size_t i = 0; i < std::min(again.outputs.size(), m.outputs.size()); ++i) {
    const auto &a = again.outputs[i], &b = m.outputs[i];
    if (a.path != b.path || a.crc32 != b.crc32) diffs.push_back(b.path);
  }
  if (!diffs.empty()) {
    std::string msg = "replay differs from the recorded run:";
    for (const auto& d : diffs) msg += " " + d;
    throw DataError(msg);
  }
  out << "replay of " << m.invocation.command << ": " << again.outputs.size()
      << " output files identical\n";
  return 0;
}

}  // namespace

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const CompatibilityError*>(&e) ||
      dynamic_cast<const LoadError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e))
    return 3;
  return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dbr: trajectory-based driving-behavior classification", "dbr"};
  app.require_subcommand(1);
  Flags f;

  auto add_out = [&](CLI::App* c, bool required = true) {
    auto* o = c->add_option("--out", f.out, "output directory");
    if (required) o->required();
  };
  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", f.config, "key = value configuration file");
    c->add_option("--seed", f.seed, "seed for splitting, resampling, initialization and shuffling");
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic trajectory dataset from a spec file");
  gen->add_option("spec", f.inputs, "spec file")->required()->expected(1);
  gen->add_option("--seed", f.seed, "overrides the spec's seed");
  add_out(gen);

  auto* prep = app.add_subcommand("prep", "filter, window, split and resample a trajectory file");
  prep->add_option("trajectories", f.inputs, "trajectory CSV")->required()->expected(1);
  prep->add_option("--labels", f.labels, "label map CSV (default: labels.csv next to the input)");
  prep->add_option("--resample", f.resample, "none, ros, rus or wl");
  add_config(prep);
  add_out(prep);

  auto* trn = app.add_subcommand("train", "train a model on a prepared dataset");
  trn->add_option("prepared", f.inputs, "prepared dataset")->required()->expected(1);
  trn->add_option("--model", f.model, "fusion, bilstm, lstm, conv1d or hmm")->required();
  trn->add_option("--resample", f.resample, "none, ros, rus or wl");
  trn->add_option("--precision", f.precision, "verify (64-bit) or fast (32-bit)");
  add_config(trn);
  add_out(trn);

  auto* ev = app.add_subcommand("eval", "evaluate checkpoints on the test split");
  ev->add_option("checkpoints", f.inputs, "one or more checkpoints")->required();
  ev->add_option("--data", f.data, "prepared dataset")->required();
  add_out(ev);

  auto* abl = app.add_subcommand("ablate", "ROS x MSCNN ablation grid over several seeds");
  abl->add_option("prepared", f.inputs, "prepared dataset")->required()->expected(1);
  abl->add_option("--seeds", f.seeds, "comma-separated seeds (default 1,2,3)");
  abl->add_option("--precision", f.precision, "verify or fast");
  add_config(abl);
  add_out(abl);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check of every model");
  gc->add_option("--seed", f.seed, "seed");
  add_out(gc, false);

  auto* cfg = app.add_subcommand("config", "print the default configuration");
  add_out(cfg, false);

  auto* rep = app.add_subcommand("replay", "re-run a recorded command and compare its outputs");
  rep->add_option("manifest", f.inputs, "manifest.json")->required()->expected(1);
  add_out(rep);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    Invocation inv;
    inv.inputs = f.inputs;
    if (gen->parsed()) {
      inv.command = "gen";
      auto spec = parse_synth_spec(read_text(f.inputs.at(0)));
      if (f.seed) spec.seed = *f.seed;
      inv.config = parse_key_values(format_synth_spec(spec));
    } else if (prep->parsed()) {
      inv.command = "prep";
      inv.options["labels"] =
          f.labels.empty() ? (fs::path(f.inputs.at(0)).parent_path() / "labels.csv").string() : f.labels;
      inv.config = resolve_run_config(f);
    } else if (trn->parsed()) {
      inv.command = "train";
      models::parse_model_kind(f.model);
      inv.options["model"] = f.model;
      inv.config = resolve_run_config(f);
    } else if (ev->parsed()) {
      inv.command = "eval";
      inv.options["data"] = f.data;
    } else if (abl->parsed()) {
      inv.command = "ablate";
      inv.config = resolve_run_config(f);
    } else if (gc->parsed()) {
      inv.command = "gradcheck";
      inv.options["seed"] = std::to_string(f.seed.value_or(0));
      if (f.out.empty()) {
        bool ok = true;
        for (const auto& r : run_gradcheck(f.seed.value_or(0))) {
          out << r.model << "\tmax relative error " << r.max_rel_error << "\t(" << r.checked
              << " components)\n";
          ok = ok && r.max_rel_error < kGradcheckTolerance;
        }
        if (!ok) throw NumericalError("gradient check above tolerance 1e-5");
        return 0;
      }
    } else if (cfg->parsed()) {
      const auto text = default_config_text();
      if (f.out.empty()) out << text;
      else io::write_text_atomic(f.out, text);
      return 0;
    } else if (rep->parsed()) {
      return replay(f.inputs.at(0), f.out, out);
    }
    execute(inv, f.out, out);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  }
}

}  // namespace dbr::cli
