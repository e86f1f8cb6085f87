#pragma once

// Run configuration as sectioned key = value text:
//
//   [run]   seed
//   [net]   side levels features endpoint_features latent_dim
//   [gp]    q jitter x_init_scale modality_init_scale
//   [train] vae_epochs vae_lr gp_epochs gp_lr joint_epochs joint_lr
//           sigma_y_init checkpoint_every
//   [data]  patients modalities side blobs tumor gains biases gammas
//           noise_sd drop
//
// Every key has a default; unknown sections and keys are rejected.

#include <cstdint>
#include <string>

#include "mgpvae/net.hpp"
#include "mgpvae/synthdata.hpp"
#include "mgpvae/training.hpp"

namespace mgpvae::config {

struct Config {
  std::uint64_t seed = 0;
  net::NetConfig net{16, 0, 32, 16, 16};
  train::GpInit gp;
  train::StagePlan plan;
  double sigma_y_init = 1.0;
  std::size_t checkpoint_every = 50;  // epochs between checkpoints during `train`
  synth::PhantomSpec data;            // data.seed mirrors `seed`
  std::size_t drop = 1;               // absent modalities per patient

  /// Throws ValidationError naming the offending field path.
  void validate() const;
};

Config parse(const std::string& text, const std::string& origin = "<config>");
Config load(const std::string& path);
/// Canonical text: fixed key order, shortest round-trip numbers.
std::string to_text(const Config& config);

}  // namespace mgpvae::config
