#include "dslab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dslab/ops.hpp"

namespace dslab {

namespace {

double eval_scalarized(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                       const std::vector<Tensor>& inputs,
                       const std::vector<double>& coeffs) {
  Tensor y = fn(inputs);
  if (y.numel() != coeffs.size()) {
    throw Error("gradcheck: output size changed between evaluations");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < coeffs.size(); ++i) s += coeffs[i] * y[i];
  return s;
}

}  // namespace

GradCheckResult check_gradients(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    std::vector<Tensor> inputs, Rng& rng, double eps, double tol) {
  std::vector<std::vector<double>> analytic(inputs.size());
  std::vector<double> coeffs;
  {
    Graph graph;
    Tensor y = fn(inputs);
    coeffs.resize(y.numel());
    for (double& c : coeffs) c = rng.uniform(-1.0, 1.0);
    Tensor s = weighted_sum(y, coeffs);
    for (Tensor& t : inputs) {
      if (t.requires_grad()) t.zero_grad();
    }
    graph.backward(s);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].requires_grad()) analytic[i] = inputs[i].grad();
    }
  }

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (analytic[i].empty()) continue;
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + eps;
      const double fp = eval_scalarized(fn, inputs, coeffs);
      inputs[i][j] = saved - eps;
      const double fm = eval_scalarized(fn, inputs, coeffs);
      inputs[i][j] = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double a = analytic[i][j];
      const double rel =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst = "input " + std::to_string(i) + ", flat index " +
                       std::to_string(j) + " (analytic " + std::to_string(a) +
                       ", numeric " + std::to_string(fd) + ")";
      }
    }
  }
  (void)tol;
  return result;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_tensor_away_from_zero(Shape shape, Rng& rng, double margin) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    const double mag = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

namespace {

Tensor rg(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, int classes) {
  std::vector<int> out(n);
  for (auto& v : out) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return out;
}

}  // namespace

const std::vector<GradCheckCase>& standard_gradcheck_cases() {
  static const std::vector<GradCheckCase> cases = [] {
    std::vector<GradCheckCase> cs;
    auto add_case = [&](const char* name,
                        std::function<GradCheckResult(Rng&)> run) {
      cs.push_back(GradCheckCase{name, std::move(run)});
    };

    add_case("matmul", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({3, 4}, rng)),
                                rg(random_tensor({4, 5}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) { return matmul(t[0], t[1]); },
          std::move(in), rng);
    });

    add_case("matmul_outer", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({3, 1}, rng)),
                                rg(random_tensor({1, 4}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) { return matmul(t[0], t[1]); },
          std::move(in), rng);
    });

    add_case("linear", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({4, 6}, rng)),
                                rg(random_tensor({5, 6}, rng)),
                                rg(random_tensor({5}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) { return linear(t[0], t[1], t[2]); },
          std::move(in), rng);
    });

    add_case("linear_no_bias", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({4, 6}, rng)),
                                rg(random_tensor({5, 6}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) {
            return linear(t[0], t[1], Tensor());
          },
          std::move(in), rng);
    });

    add_case("conv2d_3x3", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 3, 6, 6}, rng)),
                                rg(random_tensor({4, 3, 3, 3}, rng)),
                                rg(random_tensor({4}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) {
            return conv2d(t[0], t[1], t[2], 1, 1);
          },
          std::move(in), rng);
    });

    add_case("conv2d_3x3_stride2", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 3, 7, 7}, rng)),
                                rg(random_tensor({4, 3, 3, 3}, rng)),
                                rg(random_tensor({4}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) {
            return conv2d(t[0], t[1], t[2], 2, 1);
          },
          std::move(in), rng);
    });

    add_case("conv2d_1x1", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 5, 4, 4}, rng)),
                                rg(random_tensor({3, 5, 1, 1}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) {
            return conv2d(t[0], t[1], Tensor(), 1, 0);
          },
          std::move(in), rng);
    });

    add_case("conv2d_1x1_stride2", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 4, 6, 6}, rng)),
                                rg(random_tensor({8, 4, 1, 1}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) {
            return conv2d(t[0], t[1], Tensor(), 2, 0);
          },
          std::move(in), rng);
    });

    add_case("add", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 3, 4}, rng)),
                                rg(random_tensor({2, 3, 4}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) { return add(t[0], t[1]); },
          std::move(in), rng);
    });

    add_case("concat_channels", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 3, 4, 4}, rng)),
                                rg(random_tensor({2, 5, 4, 4}, rng)),
                                rg(random_tensor({2, 2, 4, 4}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) {
            return concat(std::span<const Tensor>(t.data(), t.size()), 1);
          },
          std::move(in), rng);
    });

    add_case("relu", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor_away_from_zero({3, 7}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) { return relu(t[0]); },
          std::move(in), rng);
    });

    add_case("batchnorm_train", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({3, 4, 5, 5}, rng)),
                                rg(random_tensor({4}, rng, 0.5, 1.5)),
                                rg(random_tensor({4}, rng, -0.5, 0.5))};
      auto state = std::make_shared<BatchNormState>(4);
      return check_gradients(
          [state](const std::vector<Tensor>& t) {
            return batchnorm2d(t[0], t[1], t[2], *state, true, false);
          },
          std::move(in), rng);
    });

    add_case("batchnorm_eval", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({3, 4, 5, 5}, rng)),
                                rg(random_tensor({4}, rng, 0.5, 1.5)),
                                rg(random_tensor({4}, rng, -0.5, 0.5))};
      auto state = std::make_shared<BatchNormState>(4);
      for (std::size_t c = 0; c < 4; ++c) {
        state->running_mean[c] = rng.uniform(-0.3, 0.3);
        state->running_var[c] = rng.uniform(0.5, 1.5);
      }
      return check_gradients(
          [state](const std::vector<Tensor>& t) {
            return batchnorm2d(t[0], t[1], t[2], *state, false);
          },
          std::move(in), rng);
    });

    add_case("global_avg_pool", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 3, 4, 4}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) { return global_avg_pool(t[0]); },
          std::move(in), rng);
    });

    add_case("softmax_cross_entropy", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({5, 7}, rng, -2.0, 2.0))};
      auto labels = std::make_shared<std::vector<int>>(random_labels(rng, 5, 7));
      return check_gradients(
          [labels](const std::vector<Tensor>& t) {
            return softmax_cross_entropy(t[0], *labels);
          },
          std::move(in), rng);
    });

    add_case("scalar_mul", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 3, 2}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) { return scalar_mul(t[0], -1.7); },
          std::move(in), rng);
    });

    add_case("gate_mul", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 3, 2, 2}, rng)),
                                rg(random_tensor({1}, rng, -0.8, 0.8))};
      return check_gradients(
          [](const std::vector<Tensor>& t) { return gate_mul(t[0], t[1]); },
          std::move(in), rng);
    });

    add_case("sum", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({4, 3}, rng))};
      return check_gradients(
          [](const std::vector<Tensor>& t) { return sum(t[0]); },
          std::move(in), rng);
    });

    add_case("mlp_chain", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({4, 6}, rng)),
                                rg(random_tensor({8, 6}, rng)),
                                rg(random_tensor({8}, rng, 0.1, 0.5)),
                                rg(random_tensor({3, 8}, rng)),
                                rg(random_tensor({3}, rng))};
      auto labels = std::make_shared<std::vector<int>>(random_labels(rng, 4, 3));
      return check_gradients(
          [labels](const std::vector<Tensor>& t) {
            Tensor h = relu(linear(t[0], t[1], t[2]));
            return softmax_cross_entropy(linear(h, t[3], t[4]), *labels);
          },
          std::move(in), rng);
    });

    add_case("growth_block", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 4, 5, 5}, rng)),
                                rg(random_tensor({3, 4, 3, 3}, rng)),
                                rg(random_tensor({3}, rng, 0.5, 1.5)),
                                rg(random_tensor({3}, rng, 0.2, 0.8))};
      auto state = std::make_shared<BatchNormState>(3);
      return check_gradients(
          [state](const std::vector<Tensor>& t) {
            Tensor grown = relu(batchnorm2d(conv2d(t[0], t[1], Tensor(), 1, 1),
                                            t[2], t[3], *state, true, false));
            std::vector<Tensor> parts = {t[0], grown};
            return concat(parts, 1);
          },
          std::move(in), rng);
    });

    add_case("residual_projection_block", [](Rng& rng) {
      std::vector<Tensor> in = {rg(random_tensor({2, 3, 6, 6}, rng)),
                                rg(random_tensor({5, 3, 3, 3}, rng)),
                                rg(random_tensor({5, 5, 3, 3}, rng)),
                                rg(random_tensor({5, 3, 1, 1}, rng)),
                                rg(random_tensor({5}, rng, 0.5, 1.5)),
                                rg(random_tensor({5}, rng, 0.2, 0.8))};
      auto state = std::make_shared<BatchNormState>(5);
      return check_gradients(
          [state](const std::vector<Tensor>& t) {
            Tensor h = relu(batchnorm2d(conv2d(t[0], t[1], Tensor(), 2, 1),
                                        t[4], t[5], *state, true, false));
            Tensor branch = conv2d(h, t[2], Tensor(), 1, 1);
            Tensor skip = conv2d(t[0], t[3], Tensor(), 2, 0);
            return relu(add(branch, skip));
          },
          std::move(in), rng);
    });

    return cs;
  }();
  return cases;
}

}  // namespace dslab
