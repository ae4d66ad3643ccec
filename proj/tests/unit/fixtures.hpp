#pragma once

#include <memory>

#include "npc/codec.hpp"
#include "npc/data.hpp"
#include "npc/latent_model.hpp"

namespace fixtures {

// A small model trained once per test binary and shared by the codec,
// compressor and npc suites.
struct Toy {
  npc::Dataset data;
  std::shared_ptr<const npc::lvm::LatentModel> model;
  std::shared_ptr<const npc::codec::Bins> bins;
};

inline Toy make_toy(std::vector<std::uint32_t> latent_dims, std::uint32_t precision_z = 10) {
  Toy t;
  t.data = npc::synth_generate(4, 100, 16, 16, 7);
  npc::lvm::Architecture arch{256, std::move(latent_dims), {48}, 3};
  npc::lvm::TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 1;
  t.model = std::make_shared<const npc::lvm::LatentModel>(npc::lvm::train(npc::lvm::LatentModel::init(arch), t.data, cfg).model);
  const auto stats = npc::codec::estimate_latent_stats(*t.model, t.data, 4, 9);
  t.bins = std::make_shared<const npc::codec::Bins>(npc::codec::build_bins(*t.model, stats, precision_z));
  return t;
}

inline const Toy& toy1() {
  static const Toy t = make_toy({16});
  return t;
}

inline const Toy& toy2() {
  static const Toy t = make_toy({16, 8});
  return t;
}

}  // namespace fixtures
