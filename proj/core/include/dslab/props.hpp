#pragma once

#include <string>
#include <vector>

namespace dslab {

struct PropResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;  // headline number; meaning described in detail
  std::string detail;
};

// Names of the built-in property checks, in execution order:
//   decoupling    aux-only backbone gradients vanish for zero-started heads
//   growth        head norms grow linearly from zero under fixed-batch SGD
//   warmup        a zero-weighted ramp equals zero heads, bit for bit
//   purity        side-tap heads cannot move backbone activations
//   determinism   identical seeds reproduce a training run exactly
const std::vector<std::string>& property_names();

PropResult run_property(const std::string& name);

// Empty selector runs everything.
std::vector<PropResult> run_properties(const std::vector<std::string>& names = {});

}  // namespace dslab
