#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "maga/adam.hpp"
#include "maga/block.hpp"
#include "maga/config.hpp"
#include "maga/error.hpp"
#include "maga/gradcheck.hpp"
#include "maga/image_io.hpp"
#include "maga/metrics.hpp"
#include "maga/net.hpp"
#include "maga/synth.hpp"
#include "maga/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace maga;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::string seed;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

// defaults <- config file <- --seed <- --set, then key restriction and the
// resolved snapshot. Snapshots carry command= so they cannot silently feed a
// different subcommand.
KvConfig resolve_config(const std::string& cmd, const CommonArgs& args, const KvConfig& defaults,
                        std::set<std::string> allowed) {
  KvConfig cfg = defaults;
  if (!args.config_path.empty()) {
    KvConfig file = KvConfig::from_file(args.config_path);
    for (const auto& [k, v] : file.entries()) cfg.set(k, v);
  }
  if (!args.seed.empty()) cfg.set("seed", args.seed);
  for (const std::string& pair : args.sets) cfg.set_pair(pair);
  allowed.insert("command");
  cfg.restrict_keys(allowed);
  if (cfg.has("command") && cfg.get_str("command") != cmd)
    throw std::invalid_argument("config was resolved for '" + cfg.get_str("command") +
                                "', not '" + cmd + "'");
  cfg.set("command", cmd);
  return cfg;
}

fs::path prepare_out(const std::string& cmd, const CommonArgs& args, const KvConfig& cfg) {
  fs::path out = args.out.empty() ? fs::path("out") / cmd : fs::path(args.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output dir: " + out.string());
  std::ofstream snap(out / "config.resolved.txt", std::ios::binary);
  if (!snap) throw IoError("cannot write config snapshot in " + out.string());
  snap << cfg.snapshot();
  if (!snap) throw IoError("snapshot write failed in " + out.string());
  return out;
}

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%04zu", i);
  return buf;
}

struct Dataset {
  std::vector<SynthSample> samples;
  std::vector<std::string> names;
};

Dataset synth_dataset(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.samples.push_back(make_sample(h, w, seed, i));
    d.names.push_back(sample_name(i));
  }
  return d;
}

// Manifest lines: "<image.ppm> <alpha.pgm> <trimap.pgm>", paths relative to
// the manifest. File datasets carry no fg/bg layers, so the composition loss
// is unavailable with them.
Dataset load_dataset(const std::string& manifest_path) {
  std::ifstream f(manifest_path, std::ios::binary);
  if (!f) throw IoError("cannot open dataset manifest: " + manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();
  Dataset d;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string img, alpha, tri;
    ss >> img >> alpha >> tri;
    if (img.empty() || alpha.empty() || tri.empty())
      throw IoError("malformed manifest line in " + manifest_path + ": " + line);
    SynthSample s;
    s.image = read_ppm((base / img).string());
    s.alpha = read_pgm((base / alpha).string());
    s.trimap = read_trimap((base / tri).string());
    s.fg = s.image;
    s.bg = s.image;
    d.samples.push_back(std::move(s));
    d.names.push_back(img);
  }
  if (d.samples.empty()) throw std::invalid_argument("dataset manifest is empty: " + manifest_path);
  return d;
}

void check_params_match(const NetConfig& cfg, const ParamStore& loaded) {
  ParamStore ref = init_matting_params(cfg);
  if (ref.names() != loaded.names())
    throw std::invalid_argument("checkpoint parameters do not match the model config");
  for (const std::string& name : ref.names())
    if (!(ref.get(name).shape() == loaded.get(name).shape()))
      throw std::invalid_argument("checkpoint shape mismatch for " + name);
}

std::set<std::string> trainer_keys() {
  return {"out", "seed", "steps", "batch", "lr", "lr_decay", "weight_decay", "data", "n_train"};
}

KvConfig trainer_defaults() {
  KvConfig cfg;
  cfg.set("seed", "0");
  cfg.set("steps", "200");
  cfg.set("batch", "4");
  cfg.set("lr", "0.001");
  cfg.set("lr_decay", "1");
  cfg.set("weight_decay", "0.1");
  cfg.set("n_train", "16");
  NetConfig net;
  net_config_to_kv(net, cfg);
  return cfg;
}

struct TrainOutcome {
  ParamStore params;
  std::vector<double> losses;
};

TrainOutcome run_training(const NetConfig& net, const Dataset& data, std::size_t steps,
                          std::size_t batch, double lr, double weight_decay, double lr_decay) {
  if (batch == 0) throw std::invalid_argument("batch must be positive");
  if (!(lr_decay > 0.0) || lr_decay > 1.0)
    throw std::invalid_argument("lr_decay must be in (0, 1]");
  TrainOutcome out{init_matting_params(net), {}};
  AdamState opt;
  opt.config.lr = lr;
  opt.config.weight_decay = weight_decay;
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<SynthSample> b;
    for (std::size_t j = 0; j < batch; ++j)
      b.push_back(data.samples[(step * batch + j) % data.samples.size()]);
    out.losses.push_back(train_step(out.params, net, b, opt));
    opt.config.lr *= lr_decay;
  }
  return out;
}

void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) f << i << ',' << fmt("%.12g", losses[i]) << '\n';
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<EvalRow> eval_dataset(const ParamStore& params, const NetConfig& net,
                                  const Dataset& data) {
  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const SynthSample& s = data.samples[i];
    Tensor pred = matting_forward(params, net, s.image, s.trimap);
    rows.push_back(EvalRow{data.names[i], evaluate(pred, s.alpha, s.trimap)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gradcheck(const CommonArgs& args) {
  KvConfig defaults;
  defaults.set("seed", "0");
  defaults.set("seeds", "5");
  defaults.set("corrupt", "false");
  KvConfig cfg = resolve_config("gradcheck", args, defaults, {"out", "seed", "seeds", "corrupt"});
  fs::path out = prepare_out("gradcheck", args, cfg);

  std::uint64_t base = cfg.get_u64("seed");
  std::uint64_t seeds = cfg.get_u64("seeds");
  if (seeds == 0) throw std::invalid_argument("seeds must be positive");
  double corrupt = cfg.get_bool("corrupt") ? 0.01 : 0.0;

  std::ofstream report(out / "report.csv", std::ios::binary);
  if (!report) throw IoError("cannot open report for writing in " + out.string());
  report << "op,max_rel_err,n_coords,pass\n";

  bool all_pass = true;
  for (const RegistryEntry& entry : gradcheck_registry()) {
    double worst = 0.0;
    std::size_t coords = 0;
    for (std::uint64_t s = 0; s < seeds; ++s) {
      GradCheckResult r = check_problem(entry.make(base + s), 1e-5, 1e-5, 0, corrupt);
      worst = std::max(worst, r.max_rel_err);
      coords += r.n_coords;
    }
    bool pass = worst < 1e-5;
    all_pass = all_pass && pass;
    std::cout << "gradcheck " << entry.name << " max_rel_err=" << fmt("%.3e", worst)
              << (pass ? " PASS" : " FAIL") << "\n";
    report << entry.name << ',' << fmt("%.6e", worst) << ',' << coords << ','
           << (pass ? "true" : "false") << '\n';
  }
  {
    double worst = 0.0;
    std::size_t coords = 0;
    for (std::uint64_t s = 0; s < seeds; ++s) {
      GradCheckResult r = check_network(base + s);
      if (corrupt > 0.0) r.max_rel_err = std::max(r.max_rel_err, 1.0);
      worst = std::max(worst, r.max_rel_err);
      coords += r.n_coords;
    }
    bool pass = worst < 1e-4;
    all_pass = all_pass && pass;
    std::cout << "gradcheck matting_net max_rel_err=" << fmt("%.3e", worst)
              << (pass ? " PASS" : " FAIL") << "\n";
    report << "matting_net," << fmt("%.6e", worst) << ',' << coords << ','
           << (pass ? "true" : "false") << '\n';
  }
  if (!report) throw IoError("report write failed in " + out.string());
  if (!all_pass) {
    std::cerr << "gradient check failed\n";
    return 1;
  }
  return 0;
}

int cmd_synth(const CommonArgs& args) {
  KvConfig defaults;
  defaults.set("seed", "0");
  defaults.set("count", "8");
  defaults.set("height", "32");
  defaults.set("width", "32");
  KvConfig cfg = resolve_config("synth", args, defaults, {"out", "seed", "count", "height", "width"});
  fs::path out = prepare_out("synth", args, cfg);

  std::size_t count = cfg.get_u64("count");
  std::size_t h = cfg.get_u64("height"), w = cfg.get_u64("width");
  std::uint64_t seed = cfg.get_u64("seed");
  if (count == 0) throw std::invalid_argument("count must be positive");

  std::ofstream manifest(out / "manifest.txt", std::ios::binary);
  if (!manifest) throw IoError("cannot open manifest for writing in " + out.string());
  for (std::size_t i = 0; i < count; ++i) {
    SynthSample s = make_sample(h, w, seed, i);
    std::string base = sample_name(i);
    write_ppm((out / (base + ".ppm")).string(), s.image);
    write_pgm((out / (base + ".alpha.pgm")).string(), s.alpha);
    write_trimap((out / (base + ".trimap.pgm")).string(), s.trimap);
    manifest << base << ".ppm " << base << ".alpha.pgm " << base << ".trimap.pgm\n";
  }
  if (!manifest) throw IoError("manifest write failed in " + out.string());
  std::cout << "synth wrote " << count << " samples to " << out.string() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  std::set<std::string> allowed = trainer_keys();
  for (const std::string& k : net_config_keys()) allowed.insert(k);
  KvConfig cfg = resolve_config("train", args, trainer_defaults(), allowed);
  fs::path out = prepare_out("train", args, cfg);

  KvConfig net_kv;
  for (const std::string& k : net_config_keys())
    if (cfg.has(k)) net_kv.set(k, cfg.get_str(k));
  NetConfig net = net_config_from_kv(net_kv);

  Dataset data;
  if (cfg.has("data")) {
    if (net.composition_loss)
      throw std::invalid_argument("composition_loss requires synthetic data (fg/bg layers)");
    data = load_dataset(cfg.get_str("data"));
    for (const SynthSample& s : data.samples)
      if (s.image.extent(1) != net.height || s.image.extent(2) != net.width)
        throw std::invalid_argument("dataset sample size does not match the model config");
  } else {
    data = synth_dataset(cfg.get_u64("n_train"), net.height, net.width, net.seed);
  }

  TrainOutcome res = run_training(net, data, cfg.get_u64("steps"), cfg.get_u64("batch"),
                                  cfg.get_f64("lr"), cfg.get_f64("weight_decay"),
                                  cfg.get_f64("lr_decay"));
  write_loss_csv(out / "loss.csv", res.losses);

  KvConfig ck_kv;
  net_config_to_kv(net, ck_kv);
  save_checkpoint((out / "checkpoint").string(), res.params, ck_kv.snapshot());

  double first = res.losses.empty() ? 0.0 : res.losses.front();
  double last = res.losses.empty() ? 0.0 : res.losses.back();
  std::cout << "train steps=" << res.losses.size() << " first_loss=" << fmt("%.6f", first)
            << " final_loss=" << fmt("%.6f", last) << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  KvConfig defaults;
  defaults.set("seed", "0");
  defaults.set("n_eval", "8");
  std::set<std::string> allowed = {"out", "seed", "checkpoint", "data", "n_eval"};
  for (const std::string& k : net_config_keys()) allowed.insert(k);
  KvConfig cfg = resolve_config("eval", args, defaults, allowed);
  fs::path out = prepare_out("eval", args, cfg);

  if (!cfg.has("checkpoint")) throw std::invalid_argument("eval requires checkpoint=<dir>");
  Checkpoint ck = load_checkpoint(cfg.get_str("checkpoint"));
  KvConfig net_kv = KvConfig::from_text(ck.config_text);
  for (const std::string& k : net_config_keys())
    if (cfg.has(k)) net_kv.set(k, cfg.get_str(k));
  NetConfig net = net_config_from_kv(net_kv);
  check_params_match(net, ck.params);

  Dataset data = cfg.has("data")
                     ? load_dataset(cfg.get_str("data"))
                     : synth_dataset(cfg.get_u64("n_eval"), net.height, net.width, cfg.get_u64("seed"));
  for (const SynthSample& s : data.samples)
    if (s.image.extent(1) != net.height || s.image.extent(2) != net.width)
      throw std::invalid_argument("dataset sample size does not match the model config");

  std::vector<EvalRow> rows = eval_dataset(ck.params, net, data);
  write_report_csv((out / "report.csv").string(), rows);
  write_report_jsonl((out / "report.jsonl").string(), rows);

  double sad = 0, mse = 0, grad = 0, conn = 0;
  std::size_t used = 0;
  for (const EvalRow& r : rows)
    if (!r.report.empty_mask) {
      sad += r.report.sad;
      mse += r.report.mse;
      grad += r.report.grad;
      conn += r.report.conn;
      ++used;
    }
  double d = used ? used : 1;
  std::cout << "eval n=" << rows.size() << " sad=" << fmt("%.6f", sad / d)
            << " mse=" << fmt("%.6f", mse / d) << " grad=" << fmt("%.6f", grad / d)
            << " conn=" << fmt("%.6f", conn / d) << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  KvConfig defaults = trainer_defaults();
  defaults.set("steps", "40");
  defaults.set("batch", "2");
  defaults.set("n_train", "4");
  defaults.set("n_eval", "4");
  std::set<std::string> allowed = trainer_keys();
  allowed.erase("data");
  allowed.insert("n_eval");
  allowed.insert("axis");
  for (const std::string& k : net_config_keys()) allowed.insert(k);
  KvConfig cfg = resolve_config("ablate", args, defaults, allowed);
  fs::path out = prepare_out("ablate", args, cfg);

  if (!cfg.has("axis")) throw std::invalid_argument("ablate requires axis=<kernel_size|branch_set|n_maga_blocks>");
  std::string axis = cfg.get_str("axis");

  KvConfig net_kv;
  for (const std::string& k : net_config_keys())
    if (cfg.has(k)) net_kv.set(k, cfg.get_str(k));
  NetConfig base = net_config_from_kv(net_kv);

  struct Variant {
    std::string label;
    NetConfig net;
  };
  std::vector<Variant> sweep;
  if (axis == "kernel_size") {
    for (std::size_t k : {3, 5, 7}) {
      NetConfig n = base;
      n.kernel = k;
      sweep.push_back({"k" + std::to_string(k), n});
    }
  } else if (axis == "branch_set") {
    const std::vector<std::string> sets = {"row,col", "colrow,rowcol", "col,colrow,rowcol",
                                           "row,col,colrow", "row,colrow,col,rowcol"};
    for (const std::string& s : sets) {
      NetConfig n = base;
      n.branches = parse_branch_set(s);
      std::string label = s;
      std::replace(label.begin(), label.end(), ',', '+');
      sweep.push_back({label, n});
    }
  } else if (axis == "n_maga_blocks") {
    for (std::size_t m = 0; m <= base.depth; ++m) {
      NetConfig n = base;
      n.n_maga = m;
      sweep.push_back({"m" + std::to_string(m), n});
    }
  } else {
    throw std::invalid_argument("unknown ablation axis: " + axis);
  }

  std::size_t steps = cfg.get_u64("steps"), batch = cfg.get_u64("batch");
  double lr = cfg.get_f64("lr"), wd = cfg.get_f64("weight_decay");
  double lr_decay = cfg.get_f64("lr_decay");

  std::ofstream table(out / "ablation.csv", std::ios::binary);
  if (!table) throw IoError("cannot open ablation.csv for writing in " + out.string());
  table << "label,final_loss,sad,mse,grad,conn\n";
  for (const Variant& v : sweep) {
    Dataset train_data = synth_dataset(cfg.get_u64("n_train"), v.net.height, v.net.width, v.net.seed);
    Dataset eval_data =
        synth_dataset(cfg.get_u64("n_eval"), v.net.height, v.net.width, v.net.seed + 1);
    TrainOutcome res = run_training(v.net, train_data, steps, batch, lr, wd, lr_decay);
    fs::path run_dir = out / "runs" / v.label;
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec) throw IoError("cannot create run dir: " + run_dir.string());
    write_loss_csv(run_dir / "loss.csv", res.losses);

    std::vector<EvalRow> rows = eval_dataset(res.params, v.net, eval_data);
    double sad = 0, mse = 0, grad = 0, conn = 0;
    std::size_t used = 0;
    for (const EvalRow& r : rows)
      if (!r.report.empty_mask) {
        sad += r.report.sad;
        mse += r.report.mse;
        grad += r.report.grad;
        conn += r.report.conn;
        ++used;
      }
    double d = used ? used : 1;
    double final_loss = res.losses.empty() ? 0.0 : res.losses.back();
    table << v.label << ',' << fmt("%.6f", final_loss) << ',' << fmt("%.6f", sad / d) << ','
          << fmt("%.6f", mse / d) << ',' << fmt("%.6f", grad / d) << ',' << fmt("%.6f", conn / d)
          << '\n';
    std::cout << "ablate " << v.label << " final_loss=" << fmt("%.6f", final_loss) << "\n";
  }
  if (!table) throw IoError("ablation.csv write failed in " + out.string());
  return 0;
}

int cmd_infer(const CommonArgs& args) {
  KvConfig defaults;
  defaults.set("seed", "0");
  std::set<std::string> allowed = {"out", "seed", "checkpoint", "image", "trimap", "gt"};
  for (const std::string& k : net_config_keys()) allowed.insert(k);
  KvConfig cfg = resolve_config("infer", args, defaults, allowed);
  fs::path out = prepare_out("infer", args, cfg);

  for (const char* k : {"checkpoint", "image", "trimap"})
    if (!cfg.has(k)) throw std::invalid_argument(std::string("infer requires ") + k + "=<path>");

  Checkpoint ck = load_checkpoint(cfg.get_str("checkpoint"));
  KvConfig net_kv = KvConfig::from_text(ck.config_text);
  for (const std::string& k : net_config_keys())
    if (cfg.has(k)) net_kv.set(k, cfg.get_str(k));
  NetConfig net = net_config_from_kv(net_kv);
  check_params_match(net, ck.params);

  Tensor image = read_ppm(cfg.get_str("image"));
  Tensor trimap = read_trimap(cfg.get_str("trimap"));
  Tensor pred = matting_forward(ck.params, net, image, trimap);
  Tensor alpha = Tensor::from_data({net.height, net.width}, pred.vec());
  write_pgm((out / "alpha.pgm").string(), alpha);
  std::cout << "infer wrote " << (out / "alpha.pgm").string() << "\n";

  if (cfg.has("gt")) {
    Tensor gt = read_pgm(cfg.get_str("gt"));
    MetricReport r = evaluate(pred, gt, trimap);
    std::vector<EvalRow> rows = {EvalRow{cfg.get_str("image"), r}};
    write_report_csv((out / "report.csv").string(), rows);
    std::cout << "infer sad=" << fmt("%.6f", r.sad) << " mse=" << fmt("%.6f", r.mse)
              << " grad=" << fmt("%.6f", r.grad) << " conn=" << fmt("%.6f", r.conn)
              << (r.empty_mask ? " (empty mask)" : "") << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"morpho-aware global attention matting harness"};
  app.require_subcommand(1);

  std::map<std::string, CommonArgs> cmd_args;
  std::map<std::string, CLI::App*> subs;
  for (const char* name : {"gradcheck", "train", "eval", "ablate", "synth", "infer"}) {
    CLI::App* sub = app.add_subcommand(name);
    CommonArgs& a = cmd_args[name];
    sub->add_option("--config", a.config_path, "key=value config file");
    sub->add_option("--set", a.sets, "override, key=value (repeatable)");
    sub->add_option("--out", a.out, "output directory");
    sub->add_option("--seed", a.seed, "seed override");
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help lands here with Success; anything else is a usage mistake.
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (subs["gradcheck"]->parsed()) return cmd_gradcheck(cmd_args["gradcheck"]);
    if (subs["train"]->parsed()) return cmd_train(cmd_args["train"]);
    if (subs["eval"]->parsed()) return cmd_eval(cmd_args["eval"]);
    if (subs["ablate"]->parsed()) return cmd_ablate(cmd_args["ablate"]);
    if (subs["synth"]->parsed()) return cmd_synth(cmd_args["synth"]);
    if (subs["infer"]->parsed()) return cmd_infer(cmd_args["infer"]);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
