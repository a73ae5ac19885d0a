#pragma once

// Training loop (Adam, plateau LR schedule, seeded batching, early
// stopping, best-validation checkpoint) and batch inference.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "eyenet/checkpoint.hpp"
#include "eyenet/datapipe.hpp"
#include "eyenet/errors.hpp"
#include "eyenet/image_io.hpp"
#include "eyenet/labels.hpp"
#include "eyenet/loss.hpp"
#include "eyenet/metrics.hpp"
#include "eyenet/network.hpp"
#include "eyenet/param_store.hpp"
#include "eyenet/postproc.hpp"
#include "eyenet/rng.hpp"
#include "eyenet/tape.hpp"

namespace eyenet {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  double lr0 = 0.001;
  std::size_t plateau_epochs = 5;
  double lr_decay = 0.1;
  std::size_t batch_size = 2;
  std::size_t max_epochs = 500;
  std::size_t early_stop_patience = 15;
  std::uint64_t seed = 0;
  AdamConfig adam;
  // false trains the fused head only (side-head weights 0).
  bool deep_supervision = true;
  double dice_epsilon = 1e-6;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_miou = 0.0;
  double lr = 0.0;  // in effect during this epoch

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainState {
  std::size_t epoch = 0;  // epochs completed
  std::uint64_t step = 0;
  double current_lr = 0.001;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improve = 0;
  // Non-improving epochs since the last decay or improvement.
  std::size_t plateau_counter = 0;
  std::size_t plateau_triggers = 0;
  std::vector<EpochRecord> history;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

inline TrainState initial_state(const TrainConfig& cfg) {
  TrainState s;
  s.current_lr = cfg.lr0;
  return s;
}

// One Adam update with bias correction over every entry, then zeroes the
// gradients. Throws NumericError naming the first parameter with a
// non-finite gradient, before anything is modified.
inline void adam_step(ParamStore<float>& params, double lr, const AdamConfig& a = {}) {
  for (const auto& e : params.entries()) {
    if (!e.grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
  }
  ++params.step;
  const double t = double(params.step);
  const double bc1 = 1.0 - std::pow(a.beta1, t);
  const double bc2 = 1.0 - std::pow(a.beta2, t);
  for (auto& e : params.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      const double m = a.beta1 * double(e.m[i]) + (1.0 - a.beta1) * g;
      const double v = a.beta2 * double(e.v[i]) + (1.0 - a.beta2) * g * g;
      e.m[i] = static_cast<float>(m);
      e.v[i] = static_cast<float>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      e.value[i] = static_cast<float>(double(e.value[i]) - lr * mhat / (std::sqrt(vhat) + a.eps));
    }
  }
  params.zero_grad();
}

// Plateau schedule. Strict improvement resets both counters; otherwise after
// plateau_epochs non-improving epochs the rate decays and the plateau
// counter restarts. epochs_since_improve only resets on improvement, so it
// can drive early stopping independently.
inline void schedule_lr(TrainState& s, double val_loss, const TrainConfig& cfg) {
  if (val_loss < s.best_val_loss) {
    s.best_val_loss = val_loss;
    s.epochs_since_improve = 0;
    s.plateau_counter = 0;
    return;
  }
  ++s.epochs_since_improve;
  ++s.plateau_counter;
  if (cfg.plateau_epochs > 0 && s.plateau_counter >= cfg.plateau_epochs) {
    ++s.plateau_triggers;
    s.plateau_counter = 0;
  }
  s.current_lr = cfg.lr0 * std::pow(cfg.lr_decay, double(s.plateau_triggers));
}

inline LossOptions loss_options(const TrainConfig& cfg) {
  LossOptions o;
  o.epsilon = cfg.dice_epsilon;
  if (!cfg.deep_supervision) o.head_weights = {0.0, 0.0, 0.0, 1.0};
  return o;
}

struct Batch {
  Tensor4<float> images;  // (b, 1, h, w)
  Tensor4<float> target;  // (b, 4, h, w) one-hot
  std::vector<LabelMap> masks;
  std::vector<std::string> ids;
};

inline Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> order) {
  if (order.empty()) throw ContractError("make_batch: empty batch");
  const Sample& first = samples.at(order[0]);
  const Shape s1 = first.image.shape();
  Batch b;
  b.images = Tensor4<float>(Shape{order.size(), 1, s1.h, s1.w});
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Sample& s = samples.at(order[i]);
    if (s.image.shape() != s1) {
      throw ShapeError("batch mixes image dims: '" + first.id + "' " + s1.str() + " vs '" + s.id + "' " +
                       s.image.shape().str());
    }
    std::copy_n(s.image.plane(0, 0), s1.plane(), b.images.plane(i, 0));
    b.masks.push_back(s.mask);
    b.ids.push_back(s.id);
  }
  b.target = one_hot<float>(std::span<const LabelMap>(b.masks));
  return b;
}

inline std::string batch_label(const Batch& b) {
  std::string s;
  for (const auto& id : b.ids) s += (s.empty() ? "" : ",") + id;
  return s;
}

// Per-pixel argmax over the fused head's softmax; ties go to the lowest class.
inline std::vector<LabelMap> predict_labels(const Tensor4<float>& fused_logits) {
  const Tensor4<float> prob = kernels::softmax_channels(fused_logits);
  std::vector<LabelMap> out;
  for (std::size_t n = 0; n < prob.shape().n; ++n) out.push_back(argmax_channels(prob, n));
  return out;
}

struct Evaluation {
  double loss = 0.0;  // sample-weighted mean of batch totals
  MetricReport metrics;
};

// Loss and raw-argmax metrics of the current parameters on `samples`.
inline Evaluation evaluate_model(const ParamStore<float>& params, const NetworkSpec& spec,
                                 const std::vector<Sample>& samples, const TrainConfig& cfg) {
  if (samples.empty()) throw ContractError("evaluate_model: empty sample set");
  const LossOptions lo = loss_options(cfg);
  MetricAccumulator acc;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);
  for (std::size_t b0 = 0; b0 < idx.size(); b0 += bs) {
    const Batch batch = make_batch(samples, std::span(idx).subspan(b0, std::min(bs, idx.size() - b0)));
    Tape<float> tape;
    tape.set_grad_enabled(false);
    const auto out = forward(tape, tape.constant(batch.images), params, spec);
    const auto tl = total_loss(out, batch.target, lo);
    loss_sum += tl.breakdown.total * double(batch.ids.size());
    const auto preds = predict_labels(out.fused.value());
    for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], batch.masks[i]);
  }
  return Evaluation{loss_sum / double(samples.size()), acc.report()};
}

// Sample order of one epoch, a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  SplitMix64 rng(derive_seed(seed, epoch));
  shuffle(idx, rng);
  return idx;
}

// One pass over the training set; returns the sample-weighted mean loss.
inline double train_epoch(ParamStore<float>& params, const NetworkSpec& spec, const std::vector<Sample>& train_set,
                          const TrainConfig& cfg, TrainState& state) {
  const LossOptions lo = loss_options(cfg);
  const auto order = epoch_order(train_set.size(), cfg.seed, state.epoch);
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);
  double loss_sum = 0.0;
  for (std::size_t b0 = 0; b0 < order.size(); b0 += bs) {
    const Batch batch = make_batch(train_set, std::span(order).subspan(b0, std::min(bs, order.size() - b0)));
    Tape<float> tape;
    const auto out = forward(tape, tape.constant(batch.images), params, spec);
    const auto tl = total_loss(out, batch.target, lo);
    if (!std::isfinite(tl.breakdown.total)) {
      throw NumericError("non-finite loss at epoch " + std::to_string(state.epoch) + " on batch [" +
                         batch_label(batch) + "]");
    }
    tape.backward(tl.total);
    tape.accumulate_param_grads(params);
    adam_step(params, state.current_lr, cfg.adam);
    ++state.step;
    loss_sum += tl.breakdown.total * double(batch.ids.size());
  }
  return loss_sum / double(train_set.size());
}

struct TrainHooks {
  // Called after every completed epoch with the updated state.
  std::function<void(const TrainState&, const ParamStore<float>&)> on_epoch;
  // Called whenever validation loss strictly improves.
  std::function<void(const TrainState&, const ParamStore<float>&)> on_best;
};

struct TrainResult {
  TrainState state;
  ParamStore<float> best;  // parameters at the best validation loss
};

inline bool should_stop(const TrainState& s, const TrainConfig& cfg) {
  if (s.epoch >= cfg.max_epochs) return true;
  return cfg.early_stop_patience > 0 && s.epochs_since_improve >= cfg.early_stop_patience;
}

// Trains `params` in place, continuing from `state` (pass initial_state(cfg)
// for a fresh run, or a restored state to resume).
inline TrainResult train(ParamStore<float>& params, const NetworkSpec& spec, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const TrainConfig& cfg, TrainState state,
                         const TrainHooks& hooks = {}) {
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (val_set.empty()) throw ContractError("train: empty validation set");
  TrainResult result{state, params};
  TrainState& s = result.state;
  while (!should_stop(s, cfg)) {
    EpochRecord rec;
    rec.epoch = s.epoch;
    rec.lr = s.current_lr;
    rec.train_loss = train_epoch(params, spec, train_set, cfg, s);
    const Evaluation ev = evaluate_model(params, spec, val_set, cfg);
    rec.val_loss = ev.loss;
    rec.val_miou = ev.metrics.miou;
    const double before = s.best_val_loss;
    schedule_lr(s, ev.loss, cfg);
    s.history.push_back(rec);
    ++s.epoch;
    if (s.best_val_loss < before) {
      result.best = params;
      if (hooks.on_best) hooks.on_best(s, params);
    }
    if (hooks.on_epoch) hooks.on_epoch(s, params);
  }
  return result;
}

inline TrainResult train(ParamStore<float>& params, const NetworkSpec& spec, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const TrainConfig& cfg) {
  return train(params, spec, train_set, val_set, cfg, initial_state(cfg));
}

// ---------------------------------------------------------------------------
// Resume sidecar: the checkpoint holds parameters, moments and the Adam step;
// the schedule state lives in a small text file next to it.

inline void save_state(const TrainState& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write state file '" + path.string() + "'");
  out << std::hexfloat;
  out << "epoch " << s.epoch << "\nstep " << s.step << "\ncurrent_lr " << s.current_lr << "\nbest_val_loss "
      << s.best_val_loss << "\nepochs_since_improve " << s.epochs_since_improve << "\nplateau_counter "
      << s.plateau_counter << "\nplateau_triggers " << s.plateau_triggers << "\nhistory " << s.history.size() << "\n";
  for (const auto& r : s.history) {
    out << r.epoch << ' ' << r.train_loss << ' ' << r.val_loss << ' ' << r.val_miou << ' ' << r.lr << "\n";
  }
}

inline TrainState load_state(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open state file '" + path.string() + "'");
  auto read_double = [&](std::istream& is) {
    std::string tok;
    is >> tok;
    return std::strtod(tok.c_str(), nullptr);  // parses hexfloat and inf
  };
  auto expect = [&](const char* key) {
    std::string k;
    in >> k;
    if (k != key) throw DataError("state file '" + path.string() + "': expected '" + key + "', got '" + k + "'");
  };
  TrainState s;
  std::size_t n = 0;
  expect("epoch");
  in >> s.epoch;
  expect("step");
  in >> s.step;
  expect("current_lr");
  s.current_lr = read_double(in);
  expect("best_val_loss");
  s.best_val_loss = read_double(in);
  expect("epochs_since_improve");
  in >> s.epochs_since_improve;
  expect("plateau_counter");
  in >> s.plateau_counter;
  expect("plateau_triggers");
  in >> s.plateau_triggers;
  expect("history");
  in >> n;
  for (std::size_t i = 0; i < n; ++i) {
    EpochRecord r;
    in >> r.epoch;
    r.train_loss = read_double(in);
    r.val_loss = read_double(in);
    r.val_miou = read_double(in);
    r.lr = read_double(in);
    s.history.push_back(r);
  }
  if (!in) throw DataError("state file '" + path.string() + "' is truncated");
  return s;
}

// ---------------------------------------------------------------------------
// Inference.

// Recovers the width fields of a NetworkSpec from checkpoint shapes; the
// remaining fields (dilations, slope) come from `base`.
inline NetworkSpec spec_from_store(const ParamStore<float>& store, NetworkSpec base = {}) {
  auto out_ch = [&](const std::string& name) { return store.at(name).value.shape().n; };
  try {
    base.stem_channels = out_ch("stem.w");
    base.input_channels = store.at("stem.w").value.shape().c - 2;
    for (std::size_t k = 0; k < 3; ++k) {
      base.enc_channels[k] = out_ch("enc" + std::to_string(k + 1) + ".down.w");
      base.dec_channels[k] = out_ch("dec" + std::to_string(k + 1) + ".ru.conv_a.w");
    }
    base.cbam_ratio = base.enc_channels[2] / out_ch("cbam.w0.w");
    base.cbam_kernel = store.at("cbam.spatial.w").value.shape().h;
  } catch (const ContractError& e) {
    throw CheckpointError(std::string("checkpoint does not describe an EyeNet: ") + e.what());
  }
  base.max_parameters = std::max(base.max_parameters, store.parameter_count());
  check_against(store, build<float>(base, 0));
  return base;
}

struct InferOptions {
  std::size_t width = 640;
  std::size_t height = 384;
  bool postproc = false;
  bool composite = false;
};

// Segments one normalized (1,1,h,w) image at its source resolution.
inline LabelMap segment(const Tensor4<float>& image, const ParamStore<float>& params, const NetworkSpec& spec,
                        const InferOptions& opt) {
  const Shape s = image.shape();
  const Tensor4<float> x = (s.h == opt.height && s.w == opt.width) ? image : resize(image, opt.width, opt.height);
  const auto out = forward(x, params, spec);
  LabelMap m = predict_labels(out.fused)[0];
  if (opt.postproc) m = clean_mask(m);
  if (m.h != s.h || m.w != s.w) m = resize_mask(m, s.w, s.h);
  return m;
}

// Grayscale image on the left, labels scaled to 0/85/170/255 on the right.
inline Image8 make_composite(const Image8& image, const LabelMap& mask) {
  Image8 out(image.h, image.w * 2);
  for (std::size_t y = 0; y < image.h; ++y) {
    for (std::size_t x = 0; x < image.w; ++x) {
      out.at(y, x) = image.at(y, x);
      out.at(y, image.w + x) = static_cast<std::uint8_t>(mask.at(y, x) * 85);
    }
  }
  return out;
}

struct InferReport {
  std::vector<std::filesystem::path> written;
  std::vector<std::pair<std::filesystem::path, std::string>> failures;
};

inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& input) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(input)) {
    for (const auto& e : std::filesystem::directory_iterator(input)) {
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  return files;
}

// Writes <out_dir>/<stem>.png per input (and <stem>_composite.png when
// requested). Per-file failures are collected; the run continues.
inline InferReport infer(const std::filesystem::path& input, const ParamStore<float>& params, const NetworkSpec& spec,
                         const std::filesystem::path& out_dir, const InferOptions& opt = {}) {
  std::filesystem::create_directories(out_dir);
  InferReport rep;
  for (const auto& f : list_pngs(input)) {
    try {
      const Image8 raw = read_png_gray(f);
      const LabelMap m = segment(normalize(raw), params, spec, opt);
      const auto dst = out_dir / (f.stem().string() + ".png");
      write_label_png(dst, m);
      rep.written.push_back(dst);
      if (opt.composite) write_png_gray(out_dir / (f.stem().string() + "_composite.png"), make_composite(raw, m));
    } catch (const DataError& e) {
      rep.failures.emplace_back(f, e.what());
    }
  }
  return rep;
}

}  // namespace eyenet
