#pragma once

// Negative ELBO with a Kronecker GP prior on the latent codes, Adam, and the
// three-stage schedule: autoencoder only (standard-normal prior), GP
// parameters only with the autoencoder frozen, then everything jointly.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mgpvae/errors.hpp"
#include "mgpvae/gp.hpp"
#include "mgpvae/grad_check.hpp"
#include "mgpvae/net.hpp"
#include "mgpvae/volume.hpp"

namespace mgpvae::train {

struct Model {
  net::NetConfig config;
  net::EncoderParams encoder;
  net::DecoderParams decoder;
  gp::GpParams gp;
  ad::Tensor log_sigma_y;  // [1]

  /// Fixed order: encoder, decoder, gp.features, gp.modality_raw, log_sigma_y.
  std::vector<ad::NamedTensor> named_parameters() const;
  double sigma_y() const;
  /// Deep copy (fresh leaves).
  Model clone() const;
};

struct GpInit {
  std::size_t feature_dim = 64;
  double jitter = 1e-4;
  double feature_scale = 1.0;
  double modality_scale = 1.0;
};

Model init_model(const net::NetConfig& config, const GpInit& gp_init, std::size_t patients,
                 std::size_t modalities, double sigma_y_init, std::uint64_t seed);

enum class ParamGroup { Encoder, Decoder, PatientFeatures, ModalityFactor, NoiseScale };
ParamGroup group_of(const std::string& parameter_name);
const char* group_name(ParamGroup group);

/// Present samples stacked in mask order.
struct TrainingData {
  gp::PresenceMask mask;
  ad::Tensor volumes;  // [N_present, 1, S, S, S]
  std::size_t side = 0;
  std::size_t sample_size() const { return side * side * side; }
  std::size_t count() const { return mask.count(); }
};

TrainingData make_training_data(const ViewGrid& grid);

enum class Prior { StandardNormal, Gp };

struct LossTerms {
  ad::Tensor total;
  double recon = 0.0;    // sum_n |y_n - f_d(z_n)|^2 / (2 sigma_y^2)
  double gp = 0.0;       // -log p(Z_e | X, W), normalizer included
  double entropy = 0.0;  // -1/2 sum_nl log sigma_e^2
  double noise = 0.0;    // (N K / 2) log sigma_y^2
  double value() const { return total.item(); }
};

/// Full-batch loss for fixed standard-normal draws `upsilon` [N_present, L].
LossTerms loss(const Model& model, const TrainingData& data, const ad::Tensor& upsilon,
               Prior prior);

/// Standard-normal draws for one epoch, keyed by (seed, stage, epoch).
ad::Tensor epoch_noise(std::uint64_t seed, std::size_t stage, std::size_t epoch,
                       std::size_t samples, std::size_t latent_dim);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m, v;  // one slot per parameter, same order as the parameter list

  void reset(const std::vector<ad::NamedTensor>& params);
};

/// One bias-corrected Adam update on every parameter that carries a gradient.
void adam_step(std::vector<ad::NamedTensor>& params, AdamState& state, double lr);

struct StageSpec {
  std::size_t epochs = 1;
  double lr = 1e-3;
};

struct StagePlan {
  StageSpec vae{200, 1e-3};
  StageSpec gp{100, 1e-2};
  StageSpec joint{200, 1e-3};

  const StageSpec& stage(std::size_t index) const;  // 1-based
  std::size_t total_epochs() const { return vae.epochs + gp.epochs + joint.epochs; }
  void validate() const;
};

/// Stage is 1..3 while training, 4 once the plan is exhausted.
struct Cursor {
  std::size_t stage = 1;
  std::size_t epoch = 0;
  friend bool operator==(const Cursor&, const Cursor&) = default;
};

struct EpochRecord {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  double total = 0.0, recon = 0.0, gp = 0.0, entropy = 0.0, noise = 0.0;
  double seconds = 0.0;
};

std::string format_record(const EpochRecord& record);
std::string record_header();

/// Raised when an epoch produces non-finite values; the trainer state is
/// left at the last good epoch.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, Cursor at) : NumericalError(what), cursor(at) {}
  Cursor cursor;
};

class Trainer {
 public:
  Trainer(Model model, TrainingData data, StagePlan plan, std::uint64_t seed);

  bool done() const { return cursor_.stage > 3; }
  /// Runs one full-batch step of the current stage.
  EpochRecord run_epoch();
  /// Runs until done or `max_epochs` more epochs have run (0 = unlimited).
  void run(std::size_t max_epochs, const std::function<void(const EpochRecord&)>& on_epoch = {});

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const AdamState& adam() const { return adam_; }
  const Cursor& cursor() const { return cursor_; }
  const StagePlan& plan() const { return plan_; }
  const TrainingData& data() const { return data_; }
  std::uint64_t seed() const { return seed_; }

  void restore(AdamState adam, Cursor cursor);

 private:
  void configure_stage();

  Model model_;
  TrainingData data_;
  StagePlan plan_;
  std::uint64_t seed_;
  AdamState adam_;
  Cursor cursor_;
  std::vector<ad::NamedTensor> params_;
};

}  // namespace mgpvae::train
