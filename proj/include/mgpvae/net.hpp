#pragma once

// 3D variational encoder / decoder.
//
// Encoder: `levels` x (conv s1, ELU, conv s2, ELU), flatten, dense to 2L
// (mean and pre-sigma). Decoder: dense L -> endpoint volume, then `levels`
// x (nearest upsample, conv, ELU, conv, ELU), final 1-channel conv.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mgpvae/grad_check.hpp"
#include "mgpvae/tensor.hpp"

namespace mgpvae::net {

struct NetConfig {
  std::size_t input_side = 16;
  /// 0 selects the default: 4 levels for sides >= 64, otherwise 2.
  std::size_t levels = 0;
  std::size_t features = 32;
  std::size_t endpoint_features = 16;
  std::size_t latent_dim = 32;

  std::size_t resolved_levels() const;
  std::size_t endpoint_side() const;
  std::size_t endpoint_size() const;
  /// Throws ValidationError on inconsistent geometry.
  void validate() const;
};

struct ConvLayer {
  ad::Tensor weight;  // [C_out, C_in, 3, 3, 3]
  ad::Tensor bias;    // [C_out]
};

struct DenseLayer {
  ad::Tensor weight;  // [F_out, F_in]
  ad::Tensor bias;    // [F_out]
};

struct EncoderParams {
  std::vector<ConvLayer> convs;  // two per level
  DenseLayer head;               // endpoint -> 2L
};

struct DecoderParams {
  DenseLayer stem;               // L -> endpoint
  std::vector<ConvLayer> convs;  // two per level
  ConvLayer output;              // features -> 1
};

/// Uniform(+-sqrt(1/fan_in)) weights, zero biases.
EncoderParams init_encoder(const NetConfig& config, std::uint64_t seed);
DecoderParams init_decoder(const NetConfig& config, std::uint64_t seed);

std::vector<ad::NamedTensor> named_parameters(const EncoderParams& enc);
std::vector<ad::NamedTensor> named_parameters(const DecoderParams& dec);

struct Posterior {
  ad::Tensor mu;     // [L] or [B,L]
  ad::Tensor sigma;  // same shape, strictly positive
};

/// volume [1,S,S,S] or batch [B,1,S,S,S].
Posterior encode(const ad::Tensor& volume, const EncoderParams& params, const NetConfig& config);

/// Encoder activations just before the dense head, [B,E,s,s,s].
ad::Tensor encode_endpoint(const ad::Tensor& volume, const EncoderParams& params,
                           const NetConfig& config);

/// z [L] -> [1,S,S,S]; z [B,L] -> [B,1,S,S,S].
ad::Tensor decode(const ad::Tensor& z, const DecoderParams& params, const NetConfig& config);

/// mu + upsilon * sigma with upsilon a constant of the same shape.
ad::Tensor reparameterize(const ad::Tensor& mu, const ad::Tensor& sigma,
                          const ad::Tensor& upsilon);

inline constexpr float kSigmaFloor = 1e-5f;

}  // namespace mgpvae::net
