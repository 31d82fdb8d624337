#include "dslab/model_zoo.hpp"

#include <array>

namespace dslab {

namespace {

void check_classes(int classes) {
  if (classes != 10 && classes != 100) {
    throw Error("model: classes must be 10 or 100, got " + std::to_string(classes));
  }
}

}  // namespace

ModelGraph build_densenet_ds(int classes, int growth, int block_layers,
                             const BuildOptions& opts) {
  check_classes(classes);
  if (growth < 1 || block_layers < 1) {
    throw Error("densenet-ds: growth and block_layers must be positive");
  }

  const bool reference = (growth == 12 && block_layers == 6);
  std::size_t stem = reference ? 24 : 2 * static_cast<std::size_t>(growth);
  std::array<std::size_t, 3> growths;
  if (reference) {
    growths = {8, 8, 9};  // reproduces the 24->72->84->96 channel plan
  } else {
    growths.fill(static_cast<std::size_t>(growth));
  }

  ModelGraph m(ArchKind::DenseNetDS, "densenet-ds", {3, 32, 32});
  const RoleTag bb = RoleTag::backbone();

  int cur = m.conv("stem/conv", m.input_slot(), stem, 3, 1, 1, false, bb);
  if (opts.with_bn) cur = m.batchnorm("stem/bn", cur, bb);
  cur = m.relu_step("stem/relu", cur);
  std::size_t channels = stem;

  for (int b = 0; b < 3; ++b) {
    const std::string block = "block" + std::to_string(b + 1);
    for (int l = 0; l < block_layers; ++l) {
      const std::string layer = block + "/layer" + std::to_string(l + 1);
      int grown = m.conv(layer + "/conv", cur, growths[static_cast<std::size_t>(b)],
                         3, 1, 1, false, bb);
      if (opts.with_bn) grown = m.batchnorm(layer + "/bn", grown, bb);
      grown = m.relu_step(layer + "/relu", grown);
      cur = m.concat_step(layer + "/concat", {cur, grown});
      channels += growths[static_cast<std::size_t>(b)];
    }
    if (b < 2) {
      attach_pooled_head(m, "head_aux" + std::to_string(b + 1), cur, classes,
                         RoleTag::aux(b + 1));
      std::size_t narrowed;
      if (reference) {
        narrowed = (b == 0) ? 36 : 42;
      } else {
        narrowed = channels / 2;
      }
      // strided 1x1 projection: narrows channels and halves the spatial grid
      cur = m.conv("transition" + std::to_string(b + 1) + "/conv", cur, narrowed,
                   1, 2, 0, true, bb);
      channels = narrowed;
    }
  }

  if (opts.with_bn) cur = m.batchnorm("final/bn", cur, bb);
  cur = m.relu_step("final/relu", cur);
  attach_pooled_head(m, "head_main", cur, classes, RoleTag::main_head());
  m.finalize();
  return m;
}

ModelGraph build_resnet_ds(int classes, ResVariant variant,
                           const BuildOptions& opts) {
  check_classes(classes);
  ModelGraph m(variant == ResVariant::SideTap ? ArchKind::ResNetDS_SideTap
                                              : ArchKind::ResNetDS_OnPath,
               "resnet-ds", {3, 32, 32});
  const RoleTag bb = RoleTag::backbone();

  int cur = m.conv("stem/conv", m.input_slot(), 16, 3, 1, 1, false, bb);
  if (opts.with_bn) cur = m.batchnorm("stem/bn", cur, bb);
  cur = m.relu_step("stem/relu", cur);

  const std::array<std::size_t, 3> widths = {16, 32, 64};
  for (int s = 0; s < 3; ++s) {
    for (int b = 0; b < 2; ++b) {
      const std::string label =
          "stage" + std::to_string(s + 1) + "/block" + std::to_string(b + 1);
      const int block_in = cur;
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const bool carries_aux = (s < 2 && b == 1);  // last block of stages 1, 2

      if (variant == ResVariant::OnPath && carries_aux) {
        attach_pooled_head(m, "head_aux" + std::to_string(s + 1), block_in,
                           classes, RoleTag::aux(s + 1));
      }

      int h = m.conv(label + "/conv1", block_in, widths[static_cast<std::size_t>(s)],
                     3, stride, 1, false, bb, {.in_branch = true});
      if (opts.with_bn) h = m.batchnorm(label + "/bn1", h, bb);
      h = m.relu_step(label + "/relu1", h);
      h = m.conv(label + "/conv2", h, widths[static_cast<std::size_t>(s)], 3, 1, 1,
                 false, bb, {.in_branch = true, .final_in_branch = true});
      if (opts.with_bn) h = m.batchnorm(label + "/bn2", h, bb);
      if (opts.rezero_gates) h = m.gate_step(label + "/gate", h, bb);

      int skip = block_in;
      if (stride == 2) {
        skip = m.conv(label + "/proj", block_in, widths[static_cast<std::size_t>(s)],
                      1, 2, 0, false, bb);
      }

      std::vector<int> addends = {skip, h};
      if (variant == ResVariant::OnPath && carries_aux) {
        int on_path = m.conv(label + "/aux_path", block_in,
                             widths[static_cast<std::size_t>(s)], 1, 1, 0, false,
                             RoleTag::aux(s + 1), {}, /*on_path_aux=*/true);
        addends.push_back(on_path);
      }
      cur = m.add_step(label + "/add", addends);
    }
    if (variant == ResVariant::SideTap && s < 2) {
      attach_pooled_head(m, "head_aux" + std::to_string(s + 1), cur, classes,
                         RoleTag::aux(s + 1));
    }
  }

  attach_pooled_head(m, "head_main", cur, classes, RoleTag::main_head());
  m.finalize();
  return m;
}

ModelGraph build_mlp_ds(std::size_t input_dim,
                        const std::vector<std::size_t>& hidden, int classes) {
  if (hidden.size() < 2) {
    throw Error("mlp-ds: need at least 2 hidden layers so an aux head can "
                "attach mid-network, got " + std::to_string(hidden.size()));
  }
  if (input_dim == 0 || classes < 2) {
    throw Error("mlp-ds: invalid input_dim or class count");
  }
  ModelGraph m(ArchKind::MlpDS, "mlp-ds", {input_dim});
  const RoleTag bb = RoleTag::backbone();

  const std::size_t midpoint = (hidden.size() + 1) / 2;  // 1-based layer index
  int cur = m.input_slot();
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    const std::string layer = "trunk/linear" + std::to_string(i + 1);
    cur = m.linear_layer(layer, cur, hidden[i], true, bb);
    cur = m.relu_step("trunk/relu" + std::to_string(i + 1), cur);
    if (i + 1 == midpoint) {
      int logits = m.linear_layer("head_aux1/linear", cur,
                                  static_cast<std::size_t>(classes), false,
                                  RoleTag::aux(1));
      m.declare_aux_output(1, logits);
    }
  }
  int logits = m.linear_layer("head_main/linear", cur,
                              static_cast<std::size_t>(classes), false,
                              RoleTag::main_head());
  m.declare_main_output(logits);
  m.finalize();
  return m;
}

}  // namespace dslab
