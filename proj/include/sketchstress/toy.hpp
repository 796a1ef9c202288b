#pragma once

#include "sketchstress/pipeline.hpp"
#include "sketchstress/stressnet.hpp"

namespace sketchstress::toy {

// Small end-to-end preset: two procedural shapes, three views, ten forces
// per view, trained at 64x64 until the set is memorized.

inline GenDataConfig data_config(const fs::path& output) {
  GenDataConfig cfg;
  cfg.shapes = toy_shapes();
  cfg.output = output;
  cfg.azimuths = {0.0, 45.0, 90.0};
  cfg.elevation = 10.0;
  cfg.forces_per_view = 10;
  cfg.fem_resolution = 32.0;
  cfg.image_size = 256;
  cfg.test_fraction = 0.0;
  cfg.seed = 0;
  return cfg;
}

inline GeneratorConfig generator_config() {
  GeneratorConfig g;
  g.resolution = 64;
  g.base_channels = 16;
  return g;
}

inline TrainConfig train_config() {
  TrainConfig t;
  t.batch_size = 8;
  t.epochs = 200;
  t.learning_rate = 1e-3;
  t.augment = false;
  t.seed = 0;
  return t;
}

}  // namespace sketchstress::toy
