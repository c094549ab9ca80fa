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

#ifndef CAFCN_CONFIG_HPP
#define CAFCN_CONFIG_HPP

#include <string>

#include "json.hpp"

#include "cafcn/net.hpp"
#include "cafcn/synth.hpp"
#include "cafcn/train.hpp"

namespace cafcn {

// JSON forms of the runtime knobs. Absent keys keep their defaults;
// unknown keys are rejected so typos fail loudly. Ranges are [lo, hi]
// arrays, resize targets are [h, w] pairs.
RenderStyle render_style_from_json(const nlohmann::json& j);
AugmentParams augment_params_from_json(const nlohmann::json& j);
TrainOptions train_options_from_json(const nlohmann::json& j);

// Top-level config file: {"net": {...}, "train": {...}, "style": {...}}.
// Each section is optional.
struct CliConfig {
  NetConfig net;
  TrainOptions train;
  RenderStyle style;
};

CliConfig cli_config_from_json(const nlohmann::json& j);
CliConfig load_cli_config(const std::string& path);

}  // namespace cafcn

#endif  // CAFCN_CONFIG_HPP
