#pragma once

// Deterministic multi-contrast phantoms. Every patient owns one anatomy
// field (Gaussian blobs, optionally a sharper "tumor" blob) and each
// modality is a monotone contrast transform of it:
//
//   volume_m = gain_m * anatomy^gamma_m + bias_m + noise
//
// followed by z-scoring per modality over the whole dataset.

#include <cstdint>
#include <variant>
#include <vector>

#include "mgpvae/volume.hpp"

namespace mgpvae::synth {

struct PhantomSpec {
  std::size_t patients = 8;
  std::size_t modalities = 4;
  std::size_t side = 16;
  std::size_t blobs = 4;
  bool tumor = true;
  std::vector<double> gains{1.0, -1.0, 1.5, 0.8};
  std::vector<double> biases{0.0, 0.5, 0.0, 0.2};
  std::vector<double> gammas{1.0, 1.0, 2.0, 0.5};
  double noise_sd = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratedData {
  ViewGrid grid;                          // full mask
  std::vector<std::vector<float>> anatomy;  // per patient, values in [0,1]
};

GeneratedData generate(const PhantomSpec& spec);

struct DropPerPatient {
  std::size_t count = 0;
};
struct ExplicitCells {
  std::vector<gp::Cell> absent;
};
using MaskPolicy = std::variant<DropPerPatient, ExplicitCells>;

/// Rejects policies that would leave a patient with nothing present.
gp::PresenceMask mask_dataset(std::size_t patients, std::size_t modalities,
                              const MaskPolicy& policy, std::uint64_t seed);
gp::PresenceMask mask_dataset(const ViewGrid& grid, const MaskPolicy& policy, std::uint64_t seed);

}  // namespace mgpvae::synth
