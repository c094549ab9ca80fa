/*
 * Copyright 2026 the cafcn authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "cafcn/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace cafcn {

namespace {

void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                  const char* where) {
  if (!j.is_object()) {
    throw std::invalid_argument(std::string(where) + ": expected a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) {
      throw std::invalid_argument(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

Range range_from(const nlohmann::json& j, const char* where) {
  if (!j.is_array() || j.size() != 2) {
    throw std::invalid_argument(std::string(where) + ": a range is a [lo, hi] array");
  }
  return Range{j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

RenderStyle render_style_from_json(const nlohmann::json& j) {
  require_keys(j,
               {"glyph_height", "glyph_scale", "spacing", "curvature", "rotation_deg", "fg_level",
                "bg_level", "tint", "invert_prob", "noise", "margin"},
               "style");
  RenderStyle st;
  if (j.contains("glyph_height")) st.glyph_height = j["glyph_height"].get<double>();
  if (j.contains("glyph_scale")) st.glyph_scale = range_from(j["glyph_scale"], "style.glyph_scale");
  if (j.contains("spacing")) st.spacing = range_from(j["spacing"], "style.spacing");
  if (j.contains("curvature")) st.curvature = range_from(j["curvature"], "style.curvature");
  if (j.contains("rotation_deg")) st.rotation_deg = range_from(j["rotation_deg"], "style.rotation_deg");
  if (j.contains("fg_level")) st.fg_level = range_from(j["fg_level"], "style.fg_level");
  if (j.contains("bg_level")) st.bg_level = range_from(j["bg_level"], "style.bg_level");
  if (j.contains("tint")) st.tint = j["tint"].get<double>();
  if (j.contains("invert_prob")) st.invert_prob = j["invert_prob"].get<double>();
  if (j.contains("noise")) st.noise = j["noise"].get<double>();
  if (j.contains("margin")) st.margin = j["margin"].get<double>();
  st.validate();
  return st;
}

AugmentParams augment_params_from_json(const nlohmann::json& j) {
  require_keys(j, {"rotation_deg", "hue", "brightness", "contrast", "blur_max_radius", "targets"},
               "augment");
  AugmentParams p;
  if (j.contains("rotation_deg")) p.rotation_deg = j["rotation_deg"].get<double>();
  if (j.contains("hue")) p.hue = j["hue"].get<double>();
  if (j.contains("brightness")) p.brightness = j["brightness"].get<double>();
  if (j.contains("contrast")) p.contrast = j["contrast"].get<double>();
  if (j.contains("blur_max_radius")) p.blur_max_radius = j["blur_max_radius"].get<int>();
  if (j.contains("targets")) {
    p.targets.clear();
    for (const auto& t : j["targets"]) {
      if (!t.is_array() || t.size() != 2) {
        throw std::invalid_argument("augment.targets: entries are [h, w] pairs");
      }
      p.targets.emplace_back(t[0].get<int>(), t[1].get<int>());
    }
  }
  p.validate();
  return p;
}

TrainOptions train_options_from_json(const nlohmann::json& j) {
  require_keys(j,
               {"epochs", "batch_size", "base_lr", "first_decay_epoch", "alpha", "clip_norm",
                "log_every", "max_steps_per_epoch", "augment", "augment_params", "crop_expand"},
               "train");
  TrainOptions opt;
  if (j.contains("epochs")) opt.schedule.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) opt.schedule.batch_size = j["batch_size"].get<int>();
  if (j.contains("base_lr")) opt.schedule.base_lr = j["base_lr"].get<double>();
  if (j.contains("first_decay_epoch"))
    opt.schedule.first_decay_epoch = j["first_decay_epoch"].get<int>();
  if (j.contains("alpha")) opt.alpha = j["alpha"].get<double>();
  if (j.contains("clip_norm")) opt.clip_norm = j["clip_norm"].get<double>();
  if (j.contains("log_every")) opt.log_every = j["log_every"].get<int>();
  if (j.contains("max_steps_per_epoch"))
    opt.max_steps_per_epoch = j["max_steps_per_epoch"].get<int>();
  if (j.contains("augment")) opt.augment = j["augment"].get<bool>();
  if (j.contains("augment_params"))
    opt.augment_params = augment_params_from_json(j["augment_params"]);
  if (j.contains("crop_expand")) opt.crop_expand = j["crop_expand"].get<double>();
  return opt;
}

CliConfig cli_config_from_json(const nlohmann::json& j) {
  require_keys(j, {"net", "train", "style"}, "config");
  CliConfig cfg;
  if (j.contains("net")) cfg.net = NetConfig::from_json_text(j["net"].dump());
  if (j.contains("train")) cfg.train = train_options_from_json(j["train"]);
  if (j.contains("style")) cfg.style = render_style_from_json(j["style"]);
  return cfg;
}

CliConfig load_cli_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return cli_config_from_json(j);
}

}  // namespace cafcn
