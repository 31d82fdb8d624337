#include "dslab/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "dslab/rng.hpp"

namespace dslab {

namespace {

using nlohmann::json;

// Pulls `key` out of `sec` if present, with a field-qualified error on a
// type mismatch.
template <typename T>
void read_field(const json& sec, const std::string& section,
                const std::string& key, T& out) {
  if (!sec.contains(key)) return;
  try {
    out = sec.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error("config: field '" + section + "." + key +
                "' has the wrong type");
  }
}

void reject_unknown(const json& sec, const std::string& section,
                    const std::set<std::string>& known) {
  for (const auto& [key, value] : sec.items()) {
    if (!known.contains(key)) {
      throw Error("config: unknown key '" + section + "." + key + "'");
    }
  }
}

const json& section(const json& root, const std::string& name) {
  static const json empty = json::object();
  if (!root.contains(name)) return empty;
  if (!root.at(name).is_object()) {
    throw Error("config: section '" + name + "' must be an object");
  }
  return root.at(name);
}

}  // namespace

void RunConfig::validate() const {
  if (arch != "densenet_ds" && arch != "resnet_ds" && arch != "mlp_ds") {
    throw Error("config: unknown arch '" + arch +
                "', expected densenet_ds|resnet_ds|mlp_ds");
  }
  if (variant != "side_tap" && variant != "on_path") {
    throw Error("config: unknown variant '" + variant +
                "', expected side_tap|on_path");
  }
  if (source != "cifar10" && source != "cifar100" && source != "synthetic") {
    throw Error("config: unknown data source '" + source +
                "', expected cifar10|cifar100|synthetic");
  }
  if (arch == "mlp_ds" && hidden.size() < 2) {
    throw Error("config: mlp_ds needs at least two hidden widths");
  }
  if (out_dir.empty()) throw Error("config: output.dir must not be empty");
  train.validate();
}

RunConfig parse_run_config_text(const std::string& text,
                                const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error("config: " + origin + " is not valid JSON: " + e.what());
  }
  if (!root.is_object()) {
    throw Error("config: " + origin + " must hold a JSON object");
  }
  for (const auto& [key, value] : root.items()) {
    if (key != "model" && key != "init" && key != "train" && key != "data" &&
        key != "output") {
      throw Error("config: unknown section '" + key + "'");
    }
  }

  RunConfig c;

  const json& model = section(root, "model");
  reject_unknown(model, "model",
                 {"arch", "classes", "variant", "input_dim", "hidden"});
  read_field(model, "model", "arch", c.arch);
  read_field(model, "model", "classes", c.classes);
  read_field(model, "model", "variant", c.variant);
  read_field(model, "model", "input_dim", c.input_dim);
  read_field(model, "model", "hidden", c.hidden);

  const json& init = section(root, "init");
  reject_unknown(init, "init",
                 {"scheme", "seed", "lsuv_samples", "lsuv_target_var",
                  "lsuv_tol", "lsuv_max_iter", "lsuv_include_aux"});
  std::string scheme = init_scheme_str(c.init.kind);
  read_field(init, "init", "scheme", scheme);
  c.init.kind = parse_init_scheme(scheme);
  read_field(init, "init", "seed", c.init.seed);
  read_field(init, "init", "lsuv_samples", c.init.lsuv.samples);
  read_field(init, "init", "lsuv_target_var", c.init.lsuv.target_var);
  read_field(init, "init", "lsuv_tol", c.init.lsuv.tol);
  read_field(init, "init", "lsuv_max_iter", c.init.lsuv.max_iter);
  read_field(init, "init", "lsuv_include_aux", c.init.lsuv.include_aux);

  const json& train = section(root, "train");
  reject_unknown(train, "train",
                 {"lr", "beta1", "beta2", "adam_eps", "weight_decay",
                  "batch_size", "aux_weight", "max_steps",
                  "convergence_threshold", "optimizer", "warmup_steps",
                  "ratio_every", "stop_at_threshold"});
  read_field(train, "train", "lr", c.train.lr);
  read_field(train, "train", "beta1", c.train.beta1);
  read_field(train, "train", "beta2", c.train.beta2);
  read_field(train, "train", "adam_eps", c.train.adam_eps);
  read_field(train, "train", "weight_decay", c.train.weight_decay);
  read_field(train, "train", "batch_size", c.train.batch_size);
  read_field(train, "train", "aux_weight", c.train.aux_weight);
  read_field(train, "train", "max_steps", c.train.max_steps);
  read_field(train, "train", "convergence_threshold",
             c.train.convergence_threshold);
  std::string optimizer = optimizer_str(c.train.optimizer);
  read_field(train, "train", "optimizer", optimizer);
  c.train.optimizer = parse_optimizer(optimizer);
  int warmup_steps = c.train.warmup.enabled ? c.train.warmup.steps : 0;
  read_field(train, "train", "warmup_steps", warmup_steps);
  c.train.warmup = warmup_steps > 0 ? WarmupConfig{true, warmup_steps}
                                    : WarmupConfig{false, 0};
  read_field(train, "train", "ratio_every", c.train.ratio_every);
  read_field(train, "train", "stop_at_threshold", c.train.stop_at_threshold);

  const json& data = section(root, "data");
  reject_unknown(data, "data", {"source", "dir", "subset"});
  read_field(data, "data", "source", c.source);
  read_field(data, "data", "dir", c.data_dir);
  read_field(data, "data", "subset", c.subset);

  const json& output = section(root, "output");
  reject_unknown(output, "output", {"dir"});
  read_field(output, "output", "dir", c.out_dir);

  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("config: cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config_text(text.str(), path);
}

std::string resolved_config_text(const RunConfig& c) {
  json root;
  root["model"] = {{"arch", c.arch},
                   {"classes", c.classes},
                   {"variant", c.variant},
                   {"input_dim", c.input_dim},
                   {"hidden", c.hidden}};
  root["init"] = {{"scheme", init_scheme_str(c.init.kind)},
                  {"seed", c.init.seed},
                  {"lsuv_samples", c.init.lsuv.samples},
                  {"lsuv_target_var", c.init.lsuv.target_var},
                  {"lsuv_tol", c.init.lsuv.tol},
                  {"lsuv_max_iter", c.init.lsuv.max_iter},
                  {"lsuv_include_aux", c.init.lsuv.include_aux}};
  root["train"] = {{"lr", c.train.lr},
                   {"beta1", c.train.beta1},
                   {"beta2", c.train.beta2},
                   {"adam_eps", c.train.adam_eps},
                   {"weight_decay", c.train.weight_decay},
                   {"batch_size", c.train.batch_size},
                   {"aux_weight", c.train.aux_weight},
                   {"max_steps", c.train.max_steps},
                   {"convergence_threshold", c.train.convergence_threshold},
                   {"optimizer", optimizer_str(c.train.optimizer)},
                   {"warmup_steps",
                    c.train.warmup.enabled ? c.train.warmup.steps : 0},
                   {"ratio_every", c.train.ratio_every},
                   {"stop_at_threshold", c.train.stop_at_threshold}};
  root["data"] = {
      {"source", c.source}, {"dir", c.data_dir}, {"subset", c.subset}};
  root["output"] = {{"dir", c.out_dir}};
  return root.dump(2) + "\n";
}

std::string config_hash(const RunConfig& c) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(
                    fnv1a64(resolved_config_text(c))));
  return buf;
}

}  // namespace dslab
