#pragma once

// On-disk formats. All integers and floats are little-endian.
//
// Volume file:  "MGPV" u32 version u32 dtype(1 = f32) u32 extents[3] f32 payload
// Checkpoint:   "MGPC" u32 version u64 seed u32 stage u32 epoch u64 adam_step
//               u32 config_len config_text u32 tensor_count
//               { u32 name_len name u32 rank u32 dims[rank] f32 payload }*
// Manifest:     one "patient\tmodality\trelpath\tpresent" line per cell

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mgpvae/training.hpp"
#include "mgpvae/volume.hpp"

namespace mgpvae::io {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kVolumeVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Bytes = std::vector<char>;

Bytes encode_volume(const Volume& volume);
Volume decode_volume(const Bytes& bytes, const std::string& origin = "<memory>");
void write_volume(const fs::path& path, const Volume& volume);
Volume read_volume(const fs::path& path);

Bytes read_file(const fs::path& path);
void write_file(const fs::path& path, const Bytes& bytes);
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

struct ManifestEntry {
  std::size_t patient = 0;
  std::size_t modality = 0;
  std::string path;  // relative to the dataset directory
  bool present = true;
};

inline constexpr const char* kManifestName = "manifest.tsv";

std::string format_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::string& origin);

/// Present cells go to volumes/, absent cells with data to heldout/.
std::vector<ManifestEntry> write_dataset(const fs::path& dir, const ViewGrid& grid);

struct Dataset {
  ViewGrid grid;                 // mask from the manifest
  std::vector<bool> has_truth;   // per cell: a volume (present or held out) was loaded
  bool truth(gp::Cell c) const { return has_truth[c.patient * grid.modalities + c.modality]; }
};

/// Missing held-out sidecars are tolerated; missing present volumes are not.
Dataset read_dataset(const fs::path& dir);

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> values;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  std::uint64_t seed = 0;
  train::Cursor cursor;
  std::uint64_t adam_step = 0;
  std::string config_text;
  std::vector<NamedArray> tensors;
};

Bytes encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const Bytes& bytes, const std::string& origin = "<memory>");
void write_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const fs::path& path);

/// Parameters followed by adam.m.<name> and adam.v.<name> for every parameter.
Checkpoint snapshot(const train::Trainer& trainer, const std::string& config_text);

/// Copies parameter values into `model`; the tensor name set must match
/// exactly. Returns the optimizer state stored alongside.
train::AdamState load_into(const Checkpoint& ckpt, train::Model& model);

}  // namespace mgpvae::io
