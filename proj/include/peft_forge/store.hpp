#pragma once

// Single-file checkpoints for base models, adapters, classification heads and
// whole adapter stacks.
//
//   offset 0   "PEFT"
//   offset 4   format version, u32 little-endian
//   offset 8   header length H, u32 little-endian
//   offset 12  H bytes of compact UTF-8 JSON
//   offset 12+H  payload: each manifest tensor as row-major f32 little-endian
//
// Every reader throws DataError on a bad magic, an unknown version, a
// truncated or oversized file, a manifest that disagrees with the payload, or
// a base fingerprint that does not match the model being attached to.
// Writes go to a temporary file in the same directory and are renamed into
// place.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "peft_forge/data.hpp"
#include "peft_forge/serialize.hpp"
#include "peft_forge/stacking.hpp"

namespace peft_forge {

inline constexpr char kCheckpointMagic[4] = {'P', 'E', 'F', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind { base, adapter, head, stack };

std::string_view checkpoint_kind_name(CheckpointKind k);

struct CheckpointInfo {
    CheckpointKind kind = CheckpointKind::base;
    std::uint32_t version = kCheckpointVersion;
    Json header;
    std::uint64_t header_bytes = 0;   // H
    std::uint64_t payload_bytes = 0;
    std::uint64_t file_bytes = 0;     // 12 + H + payload
    std::uint64_t parameter_count = 0;
};

/// Validates the container and returns its header without decoding tensors.
CheckpointInfo inspect_checkpoint(const std::filesystem::path& path);

template <typename T>
void save_base(const BaseModel<T>& model, const std::filesystem::path& path,
               const Vocab* vocab = nullptr);

template <typename T>
struct LoadedBase {
    BaseModel<T> model;  // frozen
    std::optional<Vocab> vocab;
};

template <typename T>
LoadedBase<T> load_base(const std::filesystem::path& path);

/// Adapter tensors, its configuration and the fingerprint of the model config
/// it was built for.
template <typename T>
void save_adapter(const AnyAdapter<T>& adapter, const std::filesystem::path& path);

/// The returned adapter is frozen, like a clone.
template <typename T>
AnyAdapter<T> load_adapter(const std::filesystem::path& path, const BaseModel<T>& base);

template <typename T>
void save_head(const ClassifierHead<T>& head, const ModelConfig& base_config,
               const std::filesystem::path& path);

template <typename T>
ClassifierHead<T> load_head(const std::filesystem::path& path, const BaseModel<T>& base);

/// Adapters, freeze flags, variant and head of a stack; the base is not
/// stored.
template <typename T>
void save_stack(const AdapterStack<T>& stack, const std::filesystem::path& path);

/// Rebuilds a stack over `base` with the saved freeze flags; the head is
/// trainable.
template <typename T>
AdapterStack<T> load_stack(const std::filesystem::path& path, const BaseModel<T>& base);

}  // namespace peft_forge
