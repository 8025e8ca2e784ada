#pragma once

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sspcr/augment.hpp"
#include "sspcr/binary_io.hpp"
#include "sspcr/data.hpp"
#include "sspcr/error.hpp"
#include "sspcr/model.hpp"
#include "sspcr/ssl.hpp"

namespace sspcr {

struct ExperimentConfig {
  DatasetConfig dataset;
  SplitParams split;  // labeling_ratio here is the default for generate/train
  ModelArch arch;
  TrainConfig train;
  std::vector<double> sweep{0.05, 0.10, 0.15, 0.20};
  std::vector<Toggles> ablation{{true, false, false}, {true, true, false}, {true, false, true}, {true, true, true}};
  double ablation_ratio = 0.05;
  int repeats = 1;
  std::string output_dir = "results";
  int jobs = 1;

  void validate() const {
    dataset.validate();
    arch.validate();
    train.validate();
    (void)split_sizes(static_cast<std::size_t>(dataset.num_images), split);
    if (repeats < 1) throw ConfigError("experiment.repeats must be >= 1");
    if (jobs < 1) throw ConfigError("experiment.jobs must be >= 1");
    if (sweep.empty()) throw ConfigError("experiment.sweep must list at least one labeling ratio");
    for (double r : sweep) {
      SplitParams p = split;
      p.labeling_ratio = r;
      (void)split_sizes(static_cast<std::size_t>(dataset.num_images), p);
    }
    SplitParams p = split;
    p.labeling_ratio = ablation_ratio;
    (void)split_sizes(static_cast<std::size_t>(dataset.num_images), p);
    for (const auto& t : ablation) {
      TrainConfig tc = train;
      tc.toggles = t;
      tc.validate();
    }
  }
};

namespace detail {

inline std::string where(const YAML::Node& n) {
  const auto m = n.Mark();
  if (m.line < 0) return "config";
  return "config:" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1);
}

template <typename T>
void read(const YAML::Node& map, const char* key, T& out) {
  const YAML::Node n = map[key];
  if (!n) return;
  try {
    out = n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where(n) + ": invalid value for '" + key + "'");
  }
}

inline void check_keys(const YAML::Node& map, const char* section, std::initializer_list<const char*> allowed) {
  if (!map) return;
  if (!map.IsMap()) throw ConfigError(where(map) + ": section '" + section + "' must be a mapping");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    if (!ok.count(key))
      throw ConfigError(where(kv.first) + ": unknown key '" + key + "' in section '" + section + "'");
  }
}

inline Toggles parse_toggle_list(const YAML::Node& n) {
  if (!n.IsSequence()) throw ConfigError(where(n) + ": a toggle combination must be a list like [tsml, ct, da]");
  Toggles t{false, false, false};
  for (const auto& e : n) {
    const auto name = e.as<std::string>();
    if (name == "tsml")
      t.tsml = true;
    else if (name == "ct" || name == "co_teaching")
      t.co_teaching = true;
    else if (name == "da" || name == "dist_align")
      t.dist_align = true;
    else
      throw ConfigError(where(e) + ": unknown toggle '" + name + "' (expected tsml, ct or da)");
  }
  return t;
}

inline AugmentationPipeline parse_pipeline(const YAML::Node& n, PipelineKind kind, AugmentationPipeline fallback) {
  if (!n) return fallback;
  if (!n.IsSequence()) throw ConfigError(where(n) + ": an augmentation pipeline must be a list of ops");
  AugmentationPipeline p{kind, {}};
  for (const auto& e : n) {
    check_keys(e, "augment op", {"op", "p", "magnitude"});
    if (!e["op"]) throw ConfigError(where(e) + ": augmentation entry needs an 'op'");
    AugmentOp op;
    try {
      op.type = augment_type_from_string(e["op"].as<std::string>());
    } catch (const ConfigError& err) {
      throw ConfigError(where(e["op"]) + ": " + err.what());
    }
    read(e, "p", op.probability);
    read(e, "magnitude", op.magnitude);
    p.ops.push_back(op);
  }
  try {
    p.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(where(n) + ": " + err.what());
  }
  return p;
}

inline YAML::Node pipeline_to_yaml(const AugmentationPipeline& p) {
  YAML::Node seq(YAML::NodeType::Sequence);
  for (const auto& op : p.ops) {
    YAML::Node e;
    e["op"] = std::string(to_string(op.type));
    e["p"] = op.probability;
    e["magnitude"] = op.magnitude;
    seq.push_back(e);
  }
  return seq;
}

inline YAML::Node toggles_to_yaml(const Toggles& t) {
  YAML::Node seq(YAML::NodeType::Sequence);
  if (t.tsml) seq.push_back("tsml");
  if (t.co_teaching) seq.push_back("ct");
  if (t.dist_align) seq.push_back("da");
  return seq;
}

}  // namespace detail

// Applies a dotted-path override such as "train.lr=0.01". The value is parsed
// as YAML, so lists ("[0.05, 0.1]") work too.
inline void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  const std::string path = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw ConfigError("override '" + assignment + "': " + e.what());
  }
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  std::vector<YAML::Node> chain{root};
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    YAML::Node next = chain.back()[parts[i]];
    if (!next.IsDefined() || next.IsNull()) {
      chain.back()[parts[i]] = YAML::Node(YAML::NodeType::Map);
      next = chain.back()[parts[i]];
    }
    chain.push_back(next);
  }
  chain.back()[parts.back()] = value;
}

inline ExperimentConfig parse_config(const YAML::Node& root) {
  using detail::read;
  ExperimentConfig cfg;
  if (!root || root.IsNull()) return cfg;
  if (!root.IsMap()) throw ConfigError("config: top level must be a mapping");
  detail::check_keys(root, "<root>", {"dataset", "split", "arch", "train", "experiment"});

  const auto ds = root["dataset"];
  detail::check_keys(ds, "dataset",
                     {"num_classes", "height", "width", "feature_dim", "num_images", "cells_per_image",
                      "class_frequencies", "signature_noise_sigma", "background_noise_sigma", "blob_radius",
                      "class_separation", "min_cell_separation", "placement_retries", "seed"});
  auto& d = cfg.dataset;
  if (ds) {
    read(ds, "num_classes", d.num_classes);
    read(ds, "height", d.height);
    read(ds, "width", d.width);
    read(ds, "feature_dim", d.feature_dim);
    read(ds, "num_images", d.num_images);
    read(ds, "cells_per_image", d.cells_per_image);
    read(ds, "class_frequencies", d.class_frequencies);
    read(ds, "signature_noise_sigma", d.signature_noise_sigma);
    read(ds, "background_noise_sigma", d.background_noise_sigma);
    read(ds, "blob_radius", d.blob_radius);
    read(ds, "class_separation", d.class_separation);
    read(ds, "min_cell_separation", d.min_cell_separation);
    read(ds, "placement_retries", d.placement_retries);
    read(ds, "seed", d.seed);
    try {
      d.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(detail::where(ds) + ": " + e.what());
    }
  }

  const auto sp = root["split"];
  detail::check_keys(sp, "split", {"labeling_ratio", "val_frac", "test_frac", "seed"});
  if (sp) {
    read(sp, "labeling_ratio", cfg.split.labeling_ratio);
    read(sp, "val_frac", cfg.split.val_frac);
    read(sp, "test_frac", cfg.split.test_frac);
    read(sp, "seed", cfg.split.seed);
  }

  const auto ar = root["arch"];
  detail::check_keys(ar, "arch", {"anchor_stride", "patch_radius", "hidden_width"});
  if (ar) {
    read(ar, "anchor_stride", cfg.arch.anchor_stride);
    read(ar, "patch_radius", cfg.arch.patch_radius);
    read(ar, "hidden_width", cfg.arch.hidden_width);
  }
  cfg.arch.num_classes = d.num_classes;
  cfg.arch.feature_dim = d.feature_dim;

  const auto tr = root["train"];
  detail::check_keys(tr, "train",
                     {"n_l", "n_u", "alpha", "burn_in_epochs", "ssl_epochs", "lr", "weight_decay", "beta1",
                      "beta2", "epsilon", "lambda", "beta", "t_floor", "global_threshold", "cls_cost_weight",
                      "eval_min_score", "distance_threshold", "seed", "toggles", "augment"});
  auto& t = cfg.train;
  if (tr) {
    read(tr, "n_l", t.n_l);
    read(tr, "n_u", t.n_u);
    read(tr, "alpha", t.alpha);
    read(tr, "burn_in_epochs", t.burn_in_epochs);
    read(tr, "ssl_epochs", t.ssl_epochs);
    read(tr, "lr", t.optimizer.lr);
    read(tr, "weight_decay", t.optimizer.weight_decay);
    read(tr, "beta1", t.optimizer.beta1);
    read(tr, "beta2", t.optimizer.beta2);
    read(tr, "epsilon", t.optimizer.epsilon);
    read(tr, "lambda", t.weights.lambda);
    read(tr, "beta", t.weights.beta);
    read(tr, "t_floor", t.t_floor);
    read(tr, "global_threshold", t.global_threshold);
    read(tr, "cls_cost_weight", t.cls_cost_weight);
    read(tr, "eval_min_score", t.eval_min_score);
    read(tr, "distance_threshold", t.distance_threshold);
    read(tr, "seed", t.seed);
    if (tr["toggles"]) t.toggles = detail::parse_toggle_list(tr["toggles"]);
    const auto aug = tr["augment"];
    detail::check_keys(aug, "train.augment", {"weak", "strong_labeled", "strong_unlabeled"});
    if (aug) {
      t.weak = detail::parse_pipeline(aug["weak"], PipelineKind::weak, t.weak);
      t.strong_labeled = detail::parse_pipeline(aug["strong_labeled"], PipelineKind::strong_labeled, t.strong_labeled);
      t.strong_unlabeled =
          detail::parse_pipeline(aug["strong_unlabeled"], PipelineKind::strong_unlabeled, t.strong_unlabeled);
    }
    try {
      t.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(detail::where(tr) + ": " + e.what());
    }
  }

  const auto ex = root["experiment"];
  detail::check_keys(ex, "experiment", {"sweep", "ablation", "ablation_ratio", "repeats", "output_dir", "jobs"});
  if (ex) {
    read(ex, "sweep", cfg.sweep);
    if (ex["ablation"]) {
      if (!ex["ablation"].IsSequence())
        throw ConfigError(detail::where(ex["ablation"]) + ": experiment.ablation must be a list of toggle lists");
      cfg.ablation.clear();
      for (const auto& combo : ex["ablation"]) {
        const auto tg = detail::parse_toggle_list(combo);
        if (!tg.tsml) throw ConfigError(detail::where(combo) + ": every ablation combination must include tsml");
        cfg.ablation.push_back(tg);
      }
    }
    read(ex, "ablation_ratio", cfg.ablation_ratio);
    read(ex, "repeats", cfg.repeats);
    read(ex, "output_dir", cfg.output_dir);
    read(ex, "jobs", cfg.jobs);
  }
  cfg.validate();
  return cfg;
}

inline YAML::Node load_config_yaml(const std::filesystem::path& path) {
  try {
    return YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot read config file " + path.string());
  } catch (const YAML::ParserException& e) {
    throw ConfigError("config:" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                      ": " + e.msg);
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    const std::vector<std::string>& overrides = {}) {
  YAML::Node root = load_config_yaml(path);
  for (const auto& o : overrides) apply_override(root, o);
  return parse_config(root);
}

// Fully resolved config, keys in a fixed order; the config hash is taken over this text.
inline std::string canonical_yaml(const ExperimentConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "num_classes" << YAML::Value << c.dataset.num_classes;
  out << YAML::Key << "height" << YAML::Value << c.dataset.height;
  out << YAML::Key << "width" << YAML::Value << c.dataset.width;
  out << YAML::Key << "feature_dim" << YAML::Value << c.dataset.feature_dim;
  out << YAML::Key << "num_images" << YAML::Value << c.dataset.num_images;
  out << YAML::Key << "cells_per_image" << YAML::Value << c.dataset.cells_per_image;
  out << YAML::Key << "class_frequencies" << YAML::Value << YAML::Flow << c.dataset.class_frequencies;
  out << YAML::Key << "signature_noise_sigma" << YAML::Value << c.dataset.signature_noise_sigma;
  out << YAML::Key << "background_noise_sigma" << YAML::Value << c.dataset.background_noise_sigma;
  out << YAML::Key << "blob_radius" << YAML::Value << c.dataset.blob_radius;
  out << YAML::Key << "class_separation" << YAML::Value << c.dataset.class_separation;
  out << YAML::Key << "min_cell_separation" << YAML::Value << c.dataset.min_cell_separation;
  out << YAML::Key << "placement_retries" << YAML::Value << c.dataset.placement_retries;
  out << YAML::Key << "seed" << YAML::Value << c.dataset.seed;
  out << YAML::EndMap;
  out << YAML::Key << "split" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "labeling_ratio" << YAML::Value << c.split.labeling_ratio;
  out << YAML::Key << "val_frac" << YAML::Value << c.split.val_frac;
  out << YAML::Key << "test_frac" << YAML::Value << c.split.test_frac;
  out << YAML::Key << "seed" << YAML::Value << c.split.seed;
  out << YAML::EndMap;
  out << YAML::Key << "arch" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "anchor_stride" << YAML::Value << c.arch.anchor_stride;
  out << YAML::Key << "patch_radius" << YAML::Value << c.arch.patch_radius;
  out << YAML::Key << "hidden_width" << YAML::Value << c.arch.hidden_width;
  out << YAML::EndMap;
  const auto& t = c.train;
  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "n_l" << YAML::Value << t.n_l;
  out << YAML::Key << "n_u" << YAML::Value << t.n_u;
  out << YAML::Key << "alpha" << YAML::Value << t.alpha;
  out << YAML::Key << "burn_in_epochs" << YAML::Value << t.burn_in_epochs;
  out << YAML::Key << "ssl_epochs" << YAML::Value << t.ssl_epochs;
  out << YAML::Key << "lr" << YAML::Value << t.optimizer.lr;
  out << YAML::Key << "weight_decay" << YAML::Value << t.optimizer.weight_decay;
  out << YAML::Key << "beta1" << YAML::Value << t.optimizer.beta1;
  out << YAML::Key << "beta2" << YAML::Value << t.optimizer.beta2;
  out << YAML::Key << "epsilon" << YAML::Value << t.optimizer.epsilon;
  out << YAML::Key << "lambda" << YAML::Value << t.weights.lambda;
  out << YAML::Key << "beta" << YAML::Value << t.weights.beta;
  out << YAML::Key << "t_floor" << YAML::Value << t.t_floor;
  out << YAML::Key << "global_threshold" << YAML::Value << t.global_threshold;
  out << YAML::Key << "cls_cost_weight" << YAML::Value << t.cls_cost_weight;
  out << YAML::Key << "eval_min_score" << YAML::Value << t.eval_min_score;
  out << YAML::Key << "distance_threshold" << YAML::Value << t.distance_threshold;
  out << YAML::Key << "seed" << YAML::Value << t.seed;
  out << YAML::Key << "toggles" << YAML::Value << YAML::Flow << detail::toggles_to_yaml(t.toggles);
  out << YAML::Key << "augment" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "weak" << YAML::Value << detail::pipeline_to_yaml(t.weak);
  out << YAML::Key << "strong_labeled" << YAML::Value << detail::pipeline_to_yaml(t.strong_labeled);
  out << YAML::Key << "strong_unlabeled" << YAML::Value << detail::pipeline_to_yaml(t.strong_unlabeled);
  out << YAML::EndMap;
  out << YAML::EndMap;
  out << YAML::Key << "experiment" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "sweep" << YAML::Value << YAML::Flow << c.sweep;
  out << YAML::Key << "ablation" << YAML::Value << YAML::BeginSeq;
  for (const auto& a : c.ablation) out << YAML::Flow << detail::toggles_to_yaml(a);
  out << YAML::EndSeq;
  out << YAML::Key << "ablation_ratio" << YAML::Value << c.ablation_ratio;
  out << YAML::Key << "repeats" << YAML::Value << c.repeats;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return out.c_str();
}

inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(io::fnv1a(canonical_yaml(c))));
  return buf;
}

}  // namespace sspcr
