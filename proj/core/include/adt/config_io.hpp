#pragma once

#include <stdexcept>
#include <string>

#include "adt/attack.hpp"
#include "adt/trainer.hpp"

namespace adt {

/// Raised for malformed or invalid configuration; the CLI maps it to exit 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunSettings {
  train::TrainConfig train;
  atk::AttackConfig attack;
};

/// JSON with every TrainConfig/AttackConfig field. Unknown keys are rejected.
std::string settings_to_json(const RunSettings& s);
RunSettings settings_from_json(const std::string& text);

RunSettings load_settings(const std::string& path);
void save_settings(const std::string& path, const RunSettings& s);

}  // namespace adt
