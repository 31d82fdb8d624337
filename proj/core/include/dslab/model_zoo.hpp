#pragma once

#include <vector>

#include "dslab/layers.hpp"

namespace dslab {

enum class ResVariant { SideTap, OnPath };

struct BuildOptions {
  bool with_bn = true;       // normalization-free variants drop every BN
  bool rezero_gates = false;  // scalar gate on each residual branch, init 1
};

// Concat-growth network on 32x32 inputs: stem to 24 channels, three growth
// blocks (to 72, 84, 96 channels) with strided 1x1 projections between them,
// aux heads reading the first two block outputs as pure side-taps, main head
// after the last block. Defaults reproduce the reference channel plan and
// its pinned parameter counts; other (growth, block_layers) values build the
// generic family: stem 2*growth, uniform growth, halving projections.
ModelGraph build_densenet_ds(int classes, int growth = 12, int block_layers = 6,
                             const BuildOptions& opts = {});

// Residual network: 3 stages x 2 basic blocks at 16/32/64 channels with
// stride-2 projection transitions; block output is input + branch (no
// post-add activation). SideTap reads stage outputs into aux heads; OnPath
// instead attaches each aux head to the last block's input h and adds a
// bias-free 1x1 projection of h (aux-tagged) into that block's residual sum.
ModelGraph build_resnet_ds(int classes, ResVariant variant,
                           const BuildOptions& opts = {});

// Linear-relu trunk with biased linears, one bias-free aux head at the
// midpoint hidden layer, bias-free main head. Needs >= 2 hidden layers.
ModelGraph build_mlp_ds(std::size_t input_dim,
                        const std::vector<std::size_t>& hidden, int classes);

}  // namespace dslab
