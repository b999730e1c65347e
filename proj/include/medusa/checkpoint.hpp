#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "medusa/model.hpp"
#include "medusa/optim.hpp"

namespace medusa {

inline constexpr char kCheckpointMagic[8] = {'M', 'E', 'D', 'U', 'S', 'A', 'C', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2, i64 = 3 };

/// One entry of the checkpoint tensor table, payload kept as raw
/// little-endian bytes.
struct RawTensor {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint32_t> extents;
  std::vector<std::uint8_t> bytes;

  std::size_t numel() const;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<RawTensor>& tensors);
/// Throws LoadError naming the first field that is missing, truncated or
/// inconsistent ("magic", "version", "crc", "tensor[3].extents", ...).
std::vector<RawTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint_file(const std::filesystem::path& path, const std::vector<RawTensor>& tensors);
std::vector<RawTensor> read_checkpoint_file(const std::filesystem::path& path);

/// What produced a checkpoint: a full model variant or a pretrained
/// global module on its own.
enum class CheckpointKind { plain, se, medusa, global_module };
std::string_view to_string(CheckpointKind k);

struct CheckpointMeta {
  CheckpointKind kind = CheckpointKind::plain;
  ModelConfig config;
  std::int64_t epoch = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
};

/// Parameters, normalization statistics (with their initialized flag),
/// optional optimizer state and metadata of a bundle.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, ModelBundle<T>& bundle, const CheckpointMeta& meta,
                     const AdamState<T>* adam = nullptr);

/// Global-module-only checkpoint as written after pretraining.
template <typename T>
void save_global_checkpoint(const std::filesystem::path& path, GlobalAttention<T>& module, const CheckpointMeta& meta);

template <typename T>
struct LoadedCheckpoint {
  ModelBundle<T> bundle;
  CheckpointMeta meta;
  std::optional<AdamState<T>> adam;
};

/// Rebuilds the bundle described by the checkpoint metadata and fills it.
/// Throws IncompatibleError for a global-module-only checkpoint.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Reads checkpoint metadata only.
CheckpointMeta read_checkpoint_meta(const std::vector<RawTensor>& tensors);

/// Copies every state entry of `refs` from the table. Throws
/// IncompatibleError listing absent names, or naming an entry whose shape
/// or element type differs. Nothing is modified when it throws.
template <typename T>
void load_state(StateRefs<T> refs, const std::vector<RawTensor>& tensors);

/// Loads the global module of `bundle` from a full medusa or a
/// global-module checkpoint (the --init-global path).
template <typename T>
void load_global_module(ModelBundle<T>& bundle, const std::filesystem::path& path);

/// FNV-1a of a byte string, used for config digests.
std::uint64_t fnv1a(std::string_view text);

}  // namespace medusa
