#include "mgpvae/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "mgpvae/errors.hpp"
#include "mgpvae/ops.hpp"
#include "mgpvae/rng.hpp"

namespace mgpvae::train {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

template <typename F>
ad::Tensor term(const char* name, F&& build) {
  try {
    return build();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("loss term '") + name + "' is non-finite: " + e.what());
  }
}

}  // namespace

std::vector<ad::NamedTensor> Model::named_parameters() const {
  auto out = net::named_parameters(encoder);
  for (auto& p : net::named_parameters(decoder)) out.push_back(std::move(p));
  out.push_back({"gp.features", gp.features});
  out.push_back({"gp.modality_raw", gp.modality_raw});
  out.push_back({"noise.log_sigma_y", log_sigma_y});
  return out;
}

double Model::sigma_y() const { return std::exp(static_cast<double>(log_sigma_y.item())); }

Model Model::clone() const {
  Model out = *this;
  auto copy_layer = [](auto& layer) {
    layer.weight = layer.weight.clone();
    layer.bias = layer.bias.clone();
  };
  for (auto& c : out.encoder.convs) copy_layer(c);
  copy_layer(out.encoder.head);
  copy_layer(out.decoder.stem);
  for (auto& c : out.decoder.convs) copy_layer(c);
  copy_layer(out.decoder.output);
  out.gp.features = gp.features.clone();
  out.gp.modality_raw = gp.modality_raw.clone();
  out.log_sigma_y = log_sigma_y.clone();
  return out;
}

Model init_model(const net::NetConfig& config, const GpInit& gp_init, std::size_t patients,
                 std::size_t modalities, double sigma_y_init, std::uint64_t seed) {
  if (!(sigma_y_init > 0.0)) throw ValidationError("train.sigma_y_init must be positive");
  Model m;
  m.config = config;
  m.encoder = net::init_encoder(config, keyed_rng({seed, 0xE4C})());
  m.decoder = net::init_decoder(config, keyed_rng({seed, 0xDEC})());
  m.gp = gp::init_gp_params(patients, modalities, gp_init.feature_dim, gp_init.jitter,
                            gp_init.feature_scale, gp_init.modality_scale,
                            keyed_rng({seed, 0x6B})());
  m.log_sigma_y = ad::Tensor::parameter({1}, {static_cast<float>(std::log(sigma_y_init))});
  return m;
}

ParamGroup group_of(const std::string& name) {
  if (name.rfind("enc.", 0) == 0) return ParamGroup::Encoder;
  if (name.rfind("dec.", 0) == 0) return ParamGroup::Decoder;
  if (name == "gp.features") return ParamGroup::PatientFeatures;
  if (name == "gp.modality_raw") return ParamGroup::ModalityFactor;
  if (name == "noise.log_sigma_y") return ParamGroup::NoiseScale;
  throw ValidationError("unknown parameter name '" + name + "'");
}

const char* group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::Encoder: return "encoder";
    case ParamGroup::Decoder: return "decoder";
    case ParamGroup::PatientFeatures: return "patient_features";
    case ParamGroup::ModalityFactor: return "modality_factor";
    case ParamGroup::NoiseScale: return "sigma_y";
  }
  return "?";
}

TrainingData make_training_data(const ViewGrid& grid) {
  grid.validate();
  grid.mask.require_each_patient_present();
  TrainingData data;
  data.mask = grid.mask;
  data.side = grid.side;
  const auto cells = grid.mask.present_cells();
  const std::size_t k = data.sample_size();
  std::vector<float> values;
  values.reserve(cells.size() * k);
  for (const auto& c : cells) {
    const auto& v = grid.at(c).voxels;
    values.insert(values.end(), v.begin(), v.end());
  }
  data.volumes = ad::Tensor({cells.size(), 1, grid.side, grid.side, grid.side}, std::move(values));
  return data;
}

LossTerms loss(const Model& model, const TrainingData& data, const ad::Tensor& upsilon,
               Prior prior) {
  const std::size_t n = data.count();
  const std::size_t l = model.config.latent_dim;
  if (upsilon.shape() != ad::Shape{n, l})
    throw ShapeError("noise draws must be [" + std::to_string(n) + "," + std::to_string(l) +
                     "], got " + ad::to_string(upsilon.shape()));
  if (model.config.input_side != data.side)
    throw ShapeError("model expects side " + std::to_string(model.config.input_side) +
                     " but data has side " + std::to_string(data.side));

  net::Posterior post = net::encode(data.volumes, model.encoder, model.config);
  ad::Tensor z = net::reparameterize(post.mu, post.sigma, upsilon);

  LossTerms out;
  ad::Tensor recon = term("reconstruction", [&] {
    ad::Tensor sse = ad::sum(ad::square(ad::sub(net::decode(z, model.decoder, model.config),
                                                 data.volumes)));
    ad::Tensor inv_two_var = ad::scale(ad::exp(ad::scale(model.log_sigma_y, -2.0f)), 0.5f);
    return ad::mul(sse, inv_two_var);
  });
  ad::Tensor prior_term = term("gp", [&] {
    if (prior == Prior::StandardNormal)
      return ad::add_scalar(ad::scale(ad::sum(ad::square(z)), 0.5f),
                            0.5 * n * l * kLog2Pi);
    ad::Tensor kx = gp::patient_kernel(model.gp.features);
    ad::Tensor kw = gp::modality_kernel(model.gp.modality_raw);
    return ad::scale(gp::kron_logdensity(z, kx, kw, data.mask, model.gp.jitter), -1.0f);
  });
  // -1/2 sum log sigma^2 = -sum log sigma
  ad::Tensor entropy = term("entropy", [&] { return ad::scale(ad::sum(ad::log(post.sigma)), -1.0f); });
  // (N K / 2) log sigma_y^2 = N K log sigma_y
  ad::Tensor noise = term("noise", [&] {
    return ad::scale(model.log_sigma_y, static_cast<double>(n * data.sample_size()));
  });

  out.recon = recon.item();
  out.gp = prior_term.item();
  out.entropy = entropy.item();
  out.noise = noise.item();
  out.total = term("total", [&] { return ad::add(ad::add(recon, prior_term), ad::add(entropy, noise)); });
  return out;
}

ad::Tensor epoch_noise(std::uint64_t seed, std::size_t stage, std::size_t epoch,
                       std::size_t samples, std::size_t latent_dim) {
  auto rng = keyed_rng({seed, 0x5EED, stage, epoch});
  std::normal_distribution<double> normal;
  std::vector<float> v(samples * latent_dim);
  for (auto& x : v) x = static_cast<float>(normal(rng));
  return ad::Tensor({samples, latent_dim}, std::move(v));
}

void AdamState::reset(const std::vector<ad::NamedTensor>& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.tensor.size(), 0.0f);
    v.emplace_back(p.tensor.size(), 0.0f);
  }
}

void adam_step(std::vector<ad::NamedTensor>& params, AdamState& state, double lr) {
  if (state.m.size() != params.size()) state.reset(params);
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params[k].tensor;
    if (!t.has_grad()) continue;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != t.size()) throw ShapeError("Adam moments do not match " + params[k].name);
    auto g = t.grad();
    auto x = t.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      x[i] = static_cast<float>(x[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps));
    }
  }
}

const StageSpec& StagePlan::stage(std::size_t index) const {
  switch (index) {
    case 1: return vae;
    case 2: return gp;
    case 3: return joint;
  }
  throw ValidationError("stage index must be 1, 2 or 3");
}

void StagePlan::validate() const {
  const char* names[] = {"vae", "gp", "joint"};
  for (std::size_t s = 1; s <= 3; ++s) {
    const std::string key = std::string("train.") + names[s - 1];
    if (stage(s).epochs < 1) throw ValidationError(key + "_epochs must be >= 1");
    if (!(stage(s).lr > 0.0) || !std::isfinite(stage(s).lr))
      throw ValidationError(key + "_lr must be positive");
  }
}

std::string record_header() { return "#stage\tepoch\ttotal\trecon\tgp\tentropy\tnoise\tseconds"; }

std::string format_record(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.3f", r.stage, r.epoch,
                r.total, r.recon, r.gp, r.entropy, r.noise, r.seconds);
  return buf;
}

Trainer::Trainer(Model model, TrainingData data, StagePlan plan, std::uint64_t seed)
    : model_(std::move(model)), data_(std::move(data)), plan_(plan), seed_(seed) {
  plan_.validate();
  data_.mask.require_each_patient_present();
  if (model_.gp.patients() != data_.mask.patients() ||
      model_.gp.modalities() != data_.mask.modalities())
    throw ValidationError("GP parameters are sized for a different patient/modality grid");
  params_ = model_.named_parameters();
  adam_.reset(params_);
  configure_stage();
}

void Trainer::restore(AdamState adam, Cursor cursor) {
  if (adam.m.size() != params_.size() || adam.v.size() != params_.size())
    throw ValidationError("optimizer state does not match the model parameters");
  if (cursor.stage < 1 || cursor.stage > 4 ||
      (cursor.stage <= 3 && cursor.epoch >= plan_.stage(cursor.stage).epochs))
    throw ValidationError("training cursor outside the stage plan");
  adam_ = std::move(adam);
  cursor_ = cursor;
  configure_stage();
}

void Trainer::configure_stage() {
  for (auto& p : params_) {
    ParamGroup g = group_of(p.name);
    bool on = false;
    switch (cursor_.stage) {
      case 1: on = g == ParamGroup::Encoder || g == ParamGroup::Decoder || g == ParamGroup::NoiseScale; break;
      case 2: on = g == ParamGroup::PatientFeatures || g == ParamGroup::ModalityFactor; break;
      case 3: on = true; break;
      default: on = false;
    }
    p.tensor.set_requires_grad(on);
    p.tensor.zero_grad();
  }
}

EpochRecord Trainer::run_epoch() {
  if (done()) throw ValidationError("training plan already complete");
  const auto start = std::chrono::steady_clock::now();
  const Cursor at = cursor_;
  ad::Tensor upsilon =
      epoch_noise(seed_, at.stage, at.epoch, data_.count(), model_.config.latent_dim);
  for (auto& p : params_) p.tensor.zero_grad();

  LossTerms terms;
  try {
    terms = loss(model_, data_, upsilon, at.stage == 1 ? Prior::StandardNormal : Prior::Gp);
    terms.total.backward();
    for (const auto& p : params_)
      for (float g : p.tensor.grad())
        if (!std::isfinite(g)) throw NumericalError("non-finite gradient in " + p.name);
  } catch (const NumericalError& e) {
    for (auto& p : params_) p.tensor.zero_grad();
    throw DivergenceError(std::string("divergence at stage ") + std::to_string(at.stage) +
                              " epoch " + std::to_string(at.epoch) + ": " + e.what(),
                          at);
  }
  adam_step(params_, adam_, plan_.stage(at.stage).lr);
  for (auto& p : params_) p.tensor.zero_grad();

  EpochRecord rec;
  rec.stage = at.stage;
  rec.epoch = at.epoch;
  rec.total = terms.value();
  rec.recon = terms.recon;
  rec.gp = terms.gp;
  rec.entropy = terms.entropy;
  rec.noise = terms.noise;
  rec.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (++cursor_.epoch == plan_.stage(at.stage).epochs) {
    ++cursor_.stage;
    cursor_.epoch = 0;
    adam_.reset(params_);
    configure_stage();
  }
  return rec;
}

void Trainer::run(std::size_t max_epochs, const std::function<void(const EpochRecord&)>& on_epoch) {
  std::size_t ran = 0;
  while (!done() && (max_epochs == 0 || ran < max_epochs)) {
    EpochRecord rec = run_epoch();
    ++ran;
    if (on_epoch) on_epoch(rec);
  }
}

}  // namespace mgpvae::train
