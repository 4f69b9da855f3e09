#pragma once

// JSON forms of the configuration types, shared by checkpoint headers, run
// manifests and CLI config files. Readers reject unknown keys and wrong
// types with DataError; absent keys keep their defaults.

#include "json.hpp"
#include "peft_forge/adapters.hpp"
#include "peft_forge/stacking.hpp"
#include "peft_forge/train.hpp"

namespace peft_forge {

using Json = nlohmann::ordered_json;

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

Json to_json(const TaskSpec& t);
TaskSpec task_from_json(const Json& j);

/// {"technique": name, ...fields}
Json to_json(const AnyAdapterConfig& c);
/// Reads the fields of `technique` (the "technique" key is optional here).
AnyAdapterConfig adapter_config_from_json(Technique technique, const Json& j);
AnyAdapterConfig adapter_config_from_json(const Json& j);

Json to_json(const TrainConfig& c);
/// Overlays the keys of `j` on `base`.
TrainConfig train_config_from_json(const Json& j, TrainConfig base);

/// 64-bit FNV-1a of the compact JSON of `c` with sorted keys.
std::uint64_t config_fingerprint(const ModelConfig& c);
std::string fingerprint_hex(std::uint64_t fp);

}  // namespace peft_forge
