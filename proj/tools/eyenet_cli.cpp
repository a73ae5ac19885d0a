// eyenet: train, evaluate, run and inspect the segmentation network.
//
// Exit codes: 0 success, 1 usage/configuration, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eyenet/eyenet.hpp"

namespace fs = std::filesystem;
using namespace eyenet;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::vector<Sample> prepare(std::vector<Sample> samples, const RunConfig& cfg) {
  for (auto& s : samples) {
    if (s.mask.w != cfg.input_width || s.mask.h != cfg.input_height) {
      s = resize_sample(s, cfg.input_width, cfg.input_height);
    }
  }
  return samples;
}

int cmd_train(const fs::path& images, const fs::path& masks, const fs::path& val_images, const fs::path& val_masks,
              const std::optional<fs::path>& config, const fs::path& out, bool resume) {
  const RunConfig cfg = config ? load_config(*config) : RunConfig{};
  auto train_set = prepare(load_dataset(images, masks), cfg);
  const auto val_set = prepare(load_dataset(val_images, val_masks), cfg);
  if (train_set.empty() || val_set.empty()) throw DataError("training and validation sets must be nonempty");
  AugmentConfig aug = cfg.augment;
  train_set = augment_dataset(std::move(train_set), aug);
  log::info("training on " + std::to_string(train_set.size()) + " samples, validating on " +
            std::to_string(val_set.size()));

  fs::create_directories(out);
  const fs::path last_ckpt = out / "last.eynt";
  const fs::path state_file = out / "state.txt";
  ParamStore<float> params = build<float>(cfg.network, cfg.train.seed);
  TrainState state = initial_state(cfg.train);
  if (resume) {
    ParamStore<float> loaded = checkpoint_load(last_ckpt);
    check_against(loaded, params);
    params = std::move(loaded);
    state = load_state(state_file);
    log::info("resuming after epoch " + std::to_string(state.epoch));
  }
  log::info("parameters: " + std::to_string(params.parameter_count()));

  TrainHooks hooks;
  hooks.on_best = [&](const TrainState&, const ParamStore<float>& p) { checkpoint_save(p, out / "best.eynt"); };
  hooks.on_epoch = [&](const TrainState& s, const ParamStore<float>& p) {
    const EpochRecord& r = s.history.back();
    std::ostringstream os;
    os << "epoch " << r.epoch << " lr " << r.lr << " train_loss " << r.train_loss << " val_loss " << r.val_loss
       << " val_miou " << r.val_miou;
    log::info(os.str());
    checkpoint_save(p, last_ckpt);
    save_state(s, state_file);
  };
  const TrainResult res = train(params, cfg.network, train_set, val_set, cfg.train, state, hooks);
  std::cout << "epochs=" << res.state.epoch << "\nsteps=" << res.state.step << "\nbest_val_loss="
            << std::setprecision(17) << res.state.best_val_loss << "\nfinal_lr=" << res.state.current_lr << "\n";
  return 0;
}

int cmd_eval(const fs::path& pred_dir, const fs::path& truth_dir, bool per_image) {
  const auto preds = list_pngs(pred_dir);
  MetricAccumulator acc;
  std::size_t missing = 0;
  for (const auto& p : preds) {
    const fs::path t = truth_dir / p.filename();
    if (!fs::exists(t)) {
      log::error("no ground truth for '" + p.filename().string() + "'");
      ++missing;
      continue;
    }
    const ConfusionMatrix cm = confusion(read_label_png(p), read_label_png(t));
    acc.add(cm);
    if (per_image) std::cout << p.stem().string() << " miou=" << std::setprecision(6) << miou(cm) << "\n";
  }
  if (acc.pooled().total() == 0) throw DataError("no prediction/truth pairs found");
  const MetricReport r = acc.report();
  print_table(std::cout, r);
  print_key_values(std::cout, r);
  return missing ? kExitData : 0;
}

ParamStore<float> load_model(const fs::path& ckpt, const RunConfig& cfg, NetworkSpec& spec) {
  ParamStore<float> params = checkpoint_load(ckpt);
  spec = spec_from_store(params, cfg.network);
  return params;
}

int cmd_infer(const fs::path& ckpt, const fs::path& input, const fs::path& out, bool postproc, bool composite,
              const std::optional<fs::path>& config) {
  const RunConfig cfg = config ? load_config(*config) : RunConfig{};
  NetworkSpec spec;
  const ParamStore<float> params = load_model(ckpt, cfg, spec);
  InferOptions opt;
  opt.width = cfg.input_width;
  opt.height = cfg.input_height;
  opt.postproc = postproc;
  opt.composite = composite;
  const InferReport rep = infer(input, params, spec, out, opt);
  for (const auto& [path, msg] : rep.failures) log::error(msg);
  std::cout << "written=" << rep.written.size() << "\nfailed=" << rep.failures.size() << "\n";
  return rep.failures.empty() ? 0 : kExitData;
}

int cmd_postproc(const fs::path& input, const fs::path& out) {
  fs::create_directories(out);
  std::size_t failed = 0, written = 0;
  for (const auto& f : list_pngs(input)) {
    try {
      write_label_png(out / f.filename(), clean_mask(read_label_png(f)));
      ++written;
    } catch (const DataError& e) {
      log::error(e.what());
      ++failed;
    }
  }
  std::cout << "written=" << written << "\nfailed=" << failed << "\n";
  return failed ? kExitData : 0;
}

int cmd_inspect(const fs::path& ckpt) {
  const ParamStore<float> params = checkpoint_load(ckpt);
  std::cout << "parameters=" << params.parameter_count() << "\nentries=" << params.size() << "\nstep=" << params.step
            << "\n";
  for (const auto& e : params.entries()) std::cout << e.name << " " << e.value.shape().str() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Eye-region semantic segmentation: train, eval, infer, postproc, inspect"};
  app.require_subcommand(1);

  fs::path images, masks, val_images, val_masks, out, pred, truth, ckpt, input;
  std::optional<fs::path> config;
  bool per_image = false, postproc = false, composite = false, resume = false;

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--images", images, "training image dir")->required();
  train_cmd->add_option("--masks", masks, "training mask dir")->required();
  train_cmd->add_option("--val-images", val_images, "validation image dir")->required();
  train_cmd->add_option("--val-masks", val_masks, "validation mask dir")->required();
  train_cmd->add_option("--config", config, "key = value config file");
  train_cmd->add_option("--out", out, "output dir for checkpoints")->required();
  train_cmd->add_flag("--resume", resume, "continue from <out>/last.eynt and <out>/state.txt");

  auto* eval_cmd = app.add_subcommand("eval", "score predicted label PNGs against ground truth");
  eval_cmd->add_option("--pred", pred, "prediction dir")->required();
  eval_cmd->add_option("--truth", truth, "ground-truth dir")->required();
  eval_cmd->add_flag("--per-image", per_image, "print per-image MIOU");

  auto* infer_cmd = app.add_subcommand("infer", "segment images with a checkpoint");
  infer_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  infer_cmd->add_option("--input", input, "PNG file or dir")->required();
  infer_cmd->add_option("--out", out, "output dir")->required();
  infer_cmd->add_option("--config", config, "config file (input size, dilations)");
  infer_cmd->add_flag("--postproc", postproc, "apply mask clean-up");
  infer_cmd->add_flag("--composite", composite, "also write image|mask composites");

  auto* post_cmd = app.add_subcommand("postproc", "clean label PNGs");
  post_cmd->add_option("--input", input, "label PNG dir")->required();
  post_cmd->add_option("--out", out, "output dir")->required();

  auto* inspect_cmd = app.add_subcommand("inspect", "print checkpoint contents");
  inspect_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(images, masks, val_images, val_masks, config, out, resume);
    if (*eval_cmd) return cmd_eval(pred, truth, per_image);
    if (*infer_cmd) return cmd_infer(ckpt, input, out, postproc, composite, config);
    if (*post_cmd) return cmd_postproc(input, out);
    if (*inspect_cmd) return cmd_inspect(ckpt);
  } catch (const NumericError& e) {
    log::error(e.what());
    return kExitNumeric;
  } catch (const DataError& e) {
    log::error(e.what());
    return kExitData;
  } catch (const ShapeError& e) {
    log::error(e.what());
    return kExitData;
  } catch (const Error& e) {
    log::error(e.what());
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    log::error(e.what());
    return kExitData;
  }
  return kExitUsage;
}
