#include "medusa/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>

#include "medusa/checkpoint.hpp"
#include "medusa/config.hpp"
#include "medusa/evaluate.hpp"
#include "medusa/train.hpp"
#include "medusa/visualize.hpp"

namespace medusa {

namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value configuration file");
    for (const auto& k : config_keys()) {
      std::string names = "--" + k.name;
      std::string dashed = k.name;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != k.name) names += ",--" + dashed;
      options[k.name] = cmd->add_option(names, values[k.name], k.help);
    }
  }

  // defaults < file < MEDUSA_SEED < flags
  RunConfig resolve() const {
    RunConfig rc;
    if (!config_path.empty()) rc.merge_file(config_path);
    rc.merge_env();
    for (const auto& [name, opt] : options) {
      if (opt->count() > 0) rc.set(name, values.at(name));
    }
    return rc;
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

fs::path require_data(const RunConfig& rc) {
  const std::string& data = rc.get("data");
  if (data.empty()) throw ConfigError("no dataset given (--data or data= in the config)");
  return data;
}

int cmd_gen_data(const ConfigFlags& flags, const fs::path& out_dir, std::ostream& out) {
  RunConfig rc = flags.resolve();
  const SyntheticConfig sc = rc.synthetic();
  ensure_dir(out_dir);
  Manifest m = generate_dataset(sc, out_dir);
  write_text(out_dir / "config.resolved", rc.resolved());
  out << "wrote " << m.rows.size() << " samples to " << out_dir.string() << '\n';
  return kExitOk;
}

int cmd_pretrain(const ConfigFlags& flags, const fs::path& out_dir, std::ostream& out) {
  RunConfig rc = flags.resolve();
  const fs::path manifest = require_data(rc);
  const ModelConfig mc = rc.model();
  const PretrainConfig pc = rc.pretrain();
  const std::uint64_t seed = rc.get_uint("seed");
  Dataset train = load_dataset(manifest, Split::train);
  Dataset val = load_dataset(manifest, Split::val);
  ensure_dir(out_dir);
  write_text(out_dir / "config.resolved", rc.resolved());

  GlobalAttention<float> module = build_global_module<float>(mc, seed);
  PretrainResult r = pretrain_global(module, train, val, pc);
  std::string log = "epoch,train_loss,val_bce,val_pixel_accuracy\n";
  log += "0,nan," + num(r.initial.bce) + "," + num(r.initial.pixel_accuracy) + "\n";
  for (const auto& e : r.log) {
    log += std::to_string(e.epoch) + "," + num(e.train_loss) + "," + num(e.val.bce) + "," + num(e.val.pixel_accuracy) + "\n";
    out << "pretrain epoch " << e.epoch << "  loss " << num(e.train_loss) << "  val bce " << num(e.val.bce)
        << "  val pixel acc " << num(e.val.pixel_accuracy) << '\n';
  }
  write_text(out_dir / "pretrain.csv", log);
  CheckpointMeta meta;
  meta.config = mc;
  meta.epoch = pc.epochs;
  meta.seed = seed;
  meta.config_digest = rc.digest();
  save_global_checkpoint(out_dir / "global.ckpt", module, meta);
  out << "wrote " << (out_dir / "global.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_train(const ConfigFlags& flags, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  RunConfig rc = flags.resolve();
  const fs::path manifest = require_data(rc);
  const Variant variant = parse_variant(rc.get("variant"));
  const ModelConfig mc = rc.model();
  const TrainConfig tc = rc.train();
  const std::string schedule = rc.get("schedule");
  if (schedule != "alternating" && schedule != "joint") throw ConfigError("schedule must be alternating or joint");

  ModelBundle<float> bundle = build_variant<float>(variant, mc, tc.seed);
  if (const std::string& init = rc.get("init_global"); !init.empty()) {
    if (variant != Variant::medusa) throw IncompatibleError("--init-global needs the medusa variant");
    load_global_module(bundle, init);
  }
  Dataset train = load_dataset(manifest, Split::train);
  Dataset val = load_dataset(manifest, Split::val);
  ensure_dir(out_dir);
  write_text(out_dir / "config.resolved", rc.resolved());

  CheckpointMeta meta;
  meta.seed = tc.seed;
  meta.config_digest = rc.digest();
  std::string log = "epoch,phase,loss,val_accuracy\n";
  AdamState<float> adam(tc.lr);
  const EpochCallback<float> on_epoch = [&](const EpochLog& e, ModelBundle<float>& b, const AdamState<float>& opt) {
    log += std::to_string(e.epoch) + "," + std::string(to_string(e.phase)) + "," + num(e.loss) + "," +
           num(e.val_accuracy) + "\n";
    write_text(out_dir / "metrics.csv", log);
    meta.epoch = e.epoch;
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ckpt", e.epoch);
    save_checkpoint(out_dir / name, b, meta, &opt);
    out << "epoch " << e.epoch << " [" << to_string(e.phase) << "]  loss " << num(e.loss) << "  val acc "
        << num(e.val_accuracy) << '\n';
  };
  write_text(out_dir / "metrics.csv", log);
  const bool alternate = variant == Variant::medusa && schedule == "alternating";
  TrainResult r = alternate ? alternating_train(bundle, adam, train, val, tc, on_epoch)
                            : train_joint(bundle, adam, train, val, tc, on_epoch);
  for (const auto& w : r.warnings) err << "warning: " << w << '\n';
  meta.epoch = tc.epochs;
  save_checkpoint(out_dir / "model.ckpt", bundle, meta, &adam);
  out << "wrote " << (out_dir / "model.ckpt").string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  bool disable_attention = false;
  std::string seg_ablation;
  std::string out;
  int batch_size = 16;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Split split = parse_split(a.split);
  std::optional<SegAblation> ablation;
  if (!a.seg_ablation.empty()) ablation = parse_seg_ablation(a.seg_ablation);
  LoadedCheckpoint<float> ck = load_checkpoint<float>(a.checkpoint);
  Dataset data = load_dataset(a.data, split);
  if (ablation) data = apply_seg_ablation(data, *ablation);
  EvalReport report = evaluate(ck.bundle, data, EvalOptions{!a.disable_attention, a.batch_size});
  if (ablation) report.seg_ablation = a.seg_ablation;
  const fs::path dir = a.out.empty() ? fs::path(a.checkpoint).parent_path() / ("eval_" + a.split) : fs::path(a.out);
  report.write(dir);
  out << report.table();
  return kExitOk;
}

struct VisualizeArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string split = "test";
  int stage = 0;
  int limit = 16;
};

int cmd_visualize(const VisualizeArgs& a, std::ostream& out) {
  const Split split = parse_split(a.split);
  LoadedCheckpoint<float> ck = load_checkpoint<float>(a.checkpoint);
  if (ck.bundle.variant != Variant::medusa) {
    throw IncompatibleError("visualize needs a medusa checkpoint, got " + std::string(to_string(ck.bundle.variant)));
  }
  const int J = ck.bundle.backbone.stage_count();
  if (a.stage < 0 || a.stage > J) throw ConfigError("--stage must be in 1.." + std::to_string(J));
  if (a.limit < 1) throw ConfigError("--limit must be >= 1");
  Dataset data = load_dataset(a.data, split);
  if (data.width != ck.bundle.config.backbone.width || data.height != ck.bundle.config.backbone.height) {
    throw DimensionError("dataset images do not match the checkpoint input geometry");
  }
  ensure_dir(a.out);
  const std::size_t n = std::min<std::size_t>(data.size(), static_cast<std::size_t>(a.limit));
  NoGradGuard<float> no_grad;
  std::size_t written = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx[1] = {i};
    Batch<float> b = make_batch<float>(data, idx);
    ForwardResult<float> r = forward(ck.bundle, b.images, ForwardOptions::uniform(Mode::eval, true));
    const auto sigma = r.attention->sigma_a_g.data();
    const std::vector<double> att(sigma.begin(), sigma.end());
    const std::string stem = fs::path(data.samples[i].id).stem().string();
    write_ppm(fs::path(a.out) / (stem + "_attention.ppm"),
              attention_overlay(data.samples[i].image, att, data.width, data.height));
    ++written;
    if (a.stage > 0) {
      const auto j = static_cast<std::size_t>(a.stage - 1);
      const std::string tag = "_stage" + std::to_string(a.stage);
      write_pgm(fs::path(a.out) / (stem + tag + "_abar.pgm"), channel_grid(r.attention->a_bar[j], 0));
      write_pgm(fs::path(a.out) / (stem + tag + "_fbar.pgm"), channel_grid(r.attention->f_bar[j], 0));
      written += 2;
    }
  }
  out << "wrote " << written << " images to " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale encoder-decoder attention classifier (desk-scale)", "medusa"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, pre_flags, train_flags;
  std::string gen_out, pre_out, train_out;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  gen_flags.attach(gen);
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "pretrain the global attention module on organ masks");
  pre_flags.attach(pre);
  pre->add_option("--out", pre_out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model variant");
  train_flags.attach(tr);
  tr->add_option("--out", train_out, "output directory")->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  eval->add_option("--data", ev.data, "dataset manifest")->required();
  eval->add_option("--split", ev.split, "train, val or test");
  eval->add_flag("--disable-attention", ev.disable_attention, "run with identity gates");
  eval->add_option("--seg-ablation", ev.seg_ablation, "type1 or type2 input masking");
  eval->add_option("--out", ev.out, "report directory");
  eval->add_option("--batch-size", ev.batch_size, "evaluation batch size");

  VisualizeArgs vis;
  auto* viz = app.add_subcommand("visualize", "export attention heat maps");
  viz->add_option("--checkpoint", vis.checkpoint, "medusa checkpoint")->required();
  viz->add_option("--data", vis.data, "dataset manifest")->required();
  viz->add_option("--out", vis.out, "output directory")->required();
  viz->add_option("--split", vis.split, "train, val or test");
  viz->add_option("--stage", vis.stage, "also export the gate and gated features of stage j (1-based)");
  viz->add_option("--limit", vis.limit, "number of samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_flags, gen_out, out);
    if (pre->parsed()) return cmd_pretrain(pre_flags, pre_out, out);
    if (tr->parsed()) return cmd_train(train_flags, train_out, out, err);
    if (eval->parsed()) return cmd_eval(ev, out);
    if (viz->parsed()) return cmd_visualize(vis, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const IncompatibleError& e) {
    err << "incompatible: " << e.what() << '\n';
    return kExitIncompatible;
  } catch (const DimensionError& e) {
    err << "incompatible: " << e.what() << '\n';
    return kExitIncompatible;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace medusa
