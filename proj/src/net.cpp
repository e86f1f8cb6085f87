#include "mgpvae/net.hpp"

#include <cmath>
#include <random>

#include "mgpvae/errors.hpp"
#include "mgpvae/ops.hpp"

namespace mgpvae::net {

std::size_t NetConfig::resolved_levels() const {
  if (levels != 0) return levels;
  return input_side >= 64 ? 4 : 2;
}

std::size_t NetConfig::endpoint_side() const { return input_side >> resolved_levels(); }

std::size_t NetConfig::endpoint_size() const {
  const std::size_t s = endpoint_side();
  return endpoint_features * s * s * s;
}

void NetConfig::validate() const {
  const std::size_t lv = resolved_levels();
  if (input_side == 0 || (input_side & (input_side - 1)) != 0)
    throw ValidationError("net.side must be a power of two, got " +
                          std::to_string(input_side));
  if (lv == 0 || lv > 16 || (input_side >> lv) == 0 || (input_side >> lv) << lv != input_side)
    throw ValidationError("net.levels = " + std::to_string(lv) + " does not divide net.side " +
                          std::to_string(input_side));
  if (features == 0 || endpoint_features == 0)
    throw ValidationError("net.features and net.endpoint_features must be positive");
  if (latent_dim == 0) throw ValidationError("net.latent_dim must be positive");
}

namespace {

std::vector<float> uniform_weights(std::size_t count, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<float> w(count);
  for (auto& v : w) v = static_cast<float>(dist(rng));
  return w;
}

ConvLayer make_conv(std::size_t cin, std::size_t cout, std::mt19937_64& rng) {
  const std::size_t fan_in = cin * 27;
  return {ad::Tensor::parameter({cout, cin, 3, 3, 3}, uniform_weights(cout * fan_in, fan_in, rng)),
          ad::Tensor::parameter({cout}, std::vector<float>(cout, 0.0f))};
}

DenseLayer make_dense(std::size_t fin, std::size_t fout, std::mt19937_64& rng) {
  return {ad::Tensor::parameter({fout, fin}, uniform_weights(fout * fin, fin, rng)),
          ad::Tensor::parameter({fout}, std::vector<float>(fout, 0.0f))};
}

void push_layer(std::vector<ad::NamedTensor>& out, const std::string& prefix, const ad::Tensor& w,
                const ad::Tensor& b) {
  out.push_back({prefix + ".weight", w});
  out.push_back({prefix + ".bias", b});
}

struct BatchView {
  ad::Tensor tensor;
  bool batched = false;
};

BatchView as_batch(const ad::Tensor& volume, const NetConfig& config) {
  const std::size_t s = config.input_side;
  const auto& shape = volume.shape();
  if (shape == ad::Shape{1, s, s, s}) return {ad::reshape(volume, {1, 1, s, s, s}), false};
  if (shape.size() == 5 && shape[1] == 1 && shape[2] == s && shape[3] == s && shape[4] == s)
    return {volume, true};
  throw ShapeError("encode: expected [1," + std::to_string(s) + "," + std::to_string(s) + "," +
                   std::to_string(s) + "] or a batch thereof, got " + ad::to_string(shape));
}

}  // namespace

EncoderParams init_encoder(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  EncoderParams p;
  std::size_t cin = 1;
  const std::size_t lv = config.resolved_levels();
  for (std::size_t level = 0; level < lv; ++level) {
    const std::size_t cout = (level + 1 == lv) ? config.endpoint_features : config.features;
    p.convs.push_back(make_conv(cin, config.features, rng));
    p.convs.push_back(make_conv(config.features, cout, rng));
    cin = cout;
  }
  p.head = make_dense(config.endpoint_size(), 2 * config.latent_dim, rng);
  return p;
}

DecoderParams init_decoder(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  DecoderParams p;
  p.stem = make_dense(config.latent_dim, config.endpoint_size(), rng);
  std::size_t cin = config.endpoint_features;
  for (std::size_t level = 0; level < config.resolved_levels(); ++level) {
    p.convs.push_back(make_conv(cin, config.features, rng));
    p.convs.push_back(make_conv(config.features, config.features, rng));
    cin = config.features;
  }
  p.output = make_conv(config.features, 1, rng);
  return p;
}

std::vector<ad::NamedTensor> named_parameters(const EncoderParams& enc) {
  std::vector<ad::NamedTensor> out;
  for (std::size_t i = 0; i < enc.convs.size(); ++i)
    push_layer(out, "enc.level" + std::to_string(i / 2) + ".conv" + std::to_string(i % 2),
               enc.convs[i].weight, enc.convs[i].bias);
  push_layer(out, "enc.head", enc.head.weight, enc.head.bias);
  return out;
}

std::vector<ad::NamedTensor> named_parameters(const DecoderParams& dec) {
  std::vector<ad::NamedTensor> out;
  push_layer(out, "dec.stem", dec.stem.weight, dec.stem.bias);
  for (std::size_t i = 0; i < dec.convs.size(); ++i)
    push_layer(out, "dec.level" + std::to_string(i / 2) + ".conv" + std::to_string(i % 2),
               dec.convs[i].weight, dec.convs[i].bias);
  push_layer(out, "dec.output", dec.output.weight, dec.output.bias);
  return out;
}

ad::Tensor encode_endpoint(const ad::Tensor& volume, const EncoderParams& params,
                           const NetConfig& config) {
  ad::Tensor h = as_batch(volume, config).tensor;
  for (std::size_t i = 0; i < params.convs.size(); ++i) {
    const auto& layer = params.convs[i];
    h = ad::elu(ad::conv3d(h, layer.weight, layer.bias, (i % 2 == 0) ? 1 : 2));
  }
  return h;
}

Posterior encode(const ad::Tensor& volume, const EncoderParams& params, const NetConfig& config) {
  BatchView view = as_batch(volume, config);
  const std::size_t batch = view.tensor.dim(0);
  const std::size_t l = config.latent_dim;
  ad::Tensor h = encode_endpoint(view.tensor, params, config);
  h = ad::reshape(h, {batch, config.endpoint_size()});
  ad::Tensor head = ad::dense(h, params.head.weight, params.head.bias);
  ad::Tensor mu = ad::slice_cols(head, 0, l);
  ad::Tensor sigma = ad::add_scalar(ad::softplus(ad::slice_cols(head, l, 2 * l)), kSigmaFloor);
  if (!view.batched) {
    mu = ad::reshape(mu, {l});
    sigma = ad::reshape(sigma, {l});
  }
  return {mu, sigma};
}

ad::Tensor decode(const ad::Tensor& z, const DecoderParams& params, const NetConfig& config) {
  const std::size_t l = config.latent_dim;
  const auto& shape = z.shape();
  bool batched;
  std::size_t batch;
  if (shape == ad::Shape{l}) {
    batched = false;
    batch = 1;
  } else if (shape.size() == 2 && shape[1] == l) {
    batched = true;
    batch = shape[0];
  } else {
    throw ShapeError("decode: expected [" + std::to_string(l) + "] or [B," + std::to_string(l) +
                     "], got " + ad::to_string(shape));
  }
  const std::size_t es = config.endpoint_side();
  ad::Tensor h = ad::dense(batched ? z : ad::reshape(z, {1, l}), params.stem.weight,
                           params.stem.bias);
  h = ad::reshape(h, {batch, config.endpoint_features, es, es, es});
  for (std::size_t i = 0; i < params.convs.size(); ++i) {
    if (i % 2 == 0) h = ad::upsample_nearest3d(h);
    h = ad::elu(ad::conv3d(h, params.convs[i].weight, params.convs[i].bias, 1));
  }
  h = ad::conv3d(h, params.output.weight, params.output.bias, 1);
  const std::size_t s = config.input_side;
  if (!batched) h = ad::reshape(h, {1, s, s, s});
  return h;
}

ad::Tensor reparameterize(const ad::Tensor& mu, const ad::Tensor& sigma,
                          const ad::Tensor& upsilon) {
  return ad::add(mu, ad::mul(upsilon, sigma));
}

}  // namespace mgpvae::net
