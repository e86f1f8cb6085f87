#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "mgpvae/gp.hpp"

namespace mgpvae {

struct Volume {
  std::array<std::uint32_t, 3> extents{0, 0, 0};
  std::vector<float> voxels;

  Volume() = default;
  Volume(std::size_t side, std::vector<float> values);
  static Volume cube(std::size_t side, float fill = 0.0f);

  std::size_t size() const { return voxels.size(); }
  bool empty() const { return voxels.empty(); }
  friend bool operator==(const Volume&, const Volume&) = default;
};

/// The P x M dataset. Volumes of absent cells may be held (ground truth)
/// but consumers must only read cells the mask marks present.
struct ViewGrid {
  std::size_t patients = 0;
  std::size_t modalities = 0;
  std::size_t side = 0;
  std::vector<Volume> volumes;  // patient-major, P*M entries
  gp::PresenceMask mask;

  ViewGrid() = default;
  ViewGrid(std::size_t patients, std::size_t modalities, std::size_t side);

  const Volume& at(std::size_t p, std::size_t m) const { return volumes[p * modalities + m]; }
  Volume& at(std::size_t p, std::size_t m) { return volumes[p * modalities + m]; }
  const Volume& at(gp::Cell c) const { return at(c.patient, c.modality); }

  /// Throws ValidationError if a present cell has no data of the right size.
  void validate() const;
};

}  // namespace mgpvae
