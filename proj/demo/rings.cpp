// Trains the reduced network on synthetic concentric-ring eyes, prints the
// per-epoch log and final metrics, and writes image|mask composites.
//
// usage: demo_rings [out_dir] [epochs]

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "eyenet/eyenet.hpp"

using namespace eyenet;

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "rings_demo";
  const std::size_t epochs = argc > 2 ? std::stoul(argv[2]) : 60;
  try {
    const auto train_set = make_ring_dataset(4, 48, 64, 7);
    const auto val_set = make_ring_dataset(2, 48, 64, 8);
    const NetworkSpec spec = reduced_spec();
    TrainConfig cfg;
    cfg.max_epochs = epochs;
    cfg.early_stop_patience = 0;
    auto params = build<float>(spec, cfg.seed);
    std::cout << "parameters " << params.parameter_count() << "\n";

    TrainHooks hooks;
    hooks.on_epoch = [](const TrainState& s, const ParamStore<float>&) {
      const EpochRecord& r = s.history.back();
      if (r.epoch % 10 == 0) {
        std::cout << "epoch " << r.epoch << " lr " << r.lr << " train_loss " << r.train_loss << " val_miou "
                  << r.val_miou << "\n";
      }
    };
    train(params, spec, train_set, train_set, cfg, initial_state(cfg), hooks);

    std::cout << "train\n";
    print_table(std::cout, evaluate_model(params, spec, train_set, cfg).metrics);
    std::cout << "held-out\n";
    print_table(std::cout, evaluate_model(params, spec, val_set, cfg).metrics);

    std::filesystem::create_directories(out);
    InferOptions opt;
    opt.width = 64;
    opt.height = 48;
    opt.postproc = true;
    for (const auto& s : val_set) {
      const LabelMap m = segment(s.image, params, spec, opt);
      write_png_gray(out / (s.id + "_composite.png"), make_composite(to_image8(s.image), m));
    }
    std::cout << "composites in " << out.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
