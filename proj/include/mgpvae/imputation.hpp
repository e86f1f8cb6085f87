#pragma once

#include <vector>

#include "mgpvae/gp.hpp"
#include "mgpvae/training.hpp"
#include "mgpvae/volume.hpp"

namespace mgpvae::impute {

/// `grid.mask` is the conditioning set: only its present cells are read.
struct ImputationRequest {
  const train::Model* model = nullptr;
  const ViewGrid* grid = nullptr;
  std::vector<gp::Cell> targets;

  /// Throws ValidationError listing every target that is present, out of
  /// range, or belongs to a patient with nothing present.
  void validate() const;
};

struct Imputed {
  gp::Cell target;
  Volume volume;
  std::vector<float> latent;    // decoded latent code
  double latent_variance = 0.0;  // GP posterior variance (zero for baselines)
};

/// Encoder means of all present cells, rows in mask order.
gp::Matrix encode_present(const train::Model& model, const ViewGrid& grid);

/// Encode present volumes, GP-predict each target's latent mean, decode.
std::vector<Imputed> impute(const ImputationRequest& request);

/// Decodes the mean of the target patient's present encoder means.
std::vector<Imputed> interp_baseline(const ImputationRequest& request);

/// Voxelwise mean of the present volumes of the target modality.
std::vector<Imputed> mean_baseline(const ImputationRequest& request);

/// Decodes a batch of latent rows to volumes.
std::vector<Volume> decode_latents(const train::Model& model, const gp::Matrix& latents);

}  // namespace mgpvae::impute
