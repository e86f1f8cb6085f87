#include "mgpvae/volume.hpp"

#include "mgpvae/errors.hpp"

namespace mgpvae {

Volume::Volume(std::size_t side, std::vector<float> values) : voxels(std::move(values)) {
  if (voxels.size() != side * side * side)
    throw ShapeError("volume of side " + std::to_string(side) + " needs " +
                     std::to_string(side * side * side) + " voxels, got " +
                     std::to_string(voxels.size()));
  const auto s = static_cast<std::uint32_t>(side);
  extents = {s, s, s};
}

Volume Volume::cube(std::size_t side, float fill) {
  return Volume(side, std::vector<float>(side * side * side, fill));
}

ViewGrid::ViewGrid(std::size_t patients, std::size_t modalities, std::size_t side)
    : patients(patients),
      modalities(modalities),
      side(side),
      volumes(patients * modalities),
      mask(patients, modalities, true) {}

void ViewGrid::validate() const {
  if (mask.patients() != patients || mask.modalities() != modalities ||
      volumes.size() != patients * modalities)
    throw ValidationError("view grid dimensions disagree with its mask");
  const auto s = static_cast<std::uint32_t>(side);
  for (const auto& c : mask.present_cells()) {
    const Volume& v = at(c);
    if (v.extents != std::array<std::uint32_t, 3>{s, s, s} || v.size() != side * side * side)
      throw ValidationError("present cell " + std::to_string(c.patient) + ":" +
                            std::to_string(c.modality) + " has no volume of side " +
                            std::to_string(side));
  }
}

}  // namespace mgpvae
