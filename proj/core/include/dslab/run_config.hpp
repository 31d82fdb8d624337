#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dslab/init.hpp"
#include "dslab/train.hpp"

namespace dslab {

// One experiment, fully specified. Parsed from a JSON document with the
// sections model / init / train / data / output; unknown keys are rejected
// and every omitted key takes the default below.
struct RunConfig {
  // model
  std::string arch = "densenet_ds";  // densenet_ds | resnet_ds | mlp_ds
  int classes = 10;
  std::string variant = "side_tap";  // resnet_ds only: side_tap | on_path
  std::size_t input_dim = 32;        // mlp_ds only
  std::vector<std::size_t> hidden = {64, 64};  // mlp_ds only

  // init: scheme kind, seed, and calibration settings
  InitScheme init = {InitKind::LionDG, 42};

  // train
  TrainConfig train;

  // data
  std::string source = "synthetic";  // cifar10 | cifar100 | synthetic
  std::string data_dir;              // empty: fall back to $DSLAB_DATA_DIR
  std::size_t subset = 0;            // per-class cap; 0 = source default

  // output
  std::string out_dir = "runs";

  void validate() const;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text,
                                const std::string& origin);

// The exact configuration a run used, every field explicit, keys sorted.
// Written next to each run's outputs so the run is reproducible from the
// sidecar alone.
std::string resolved_config_text(const RunConfig& c);

// 16 hex digits over the resolved text; names a finished run for the
// idempotent sweep skip.
std::string config_hash(const RunConfig& c);

}  // namespace dslab
