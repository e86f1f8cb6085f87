#pragma once

// Kronecker-structured GP prior over latent columns.
//
// Samples are indexed patient-major: sample (p, m) sits at row p*M + m of
// the full grid, and its prior covariance with (p', m') is
// Kx[p,p'] * Kw[m,m']. Every latent column is an independent draw from
// N(0, K + jitter*I) restricted to the present samples.

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "mgpvae/tensor.hpp"

namespace mgpvae::gp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Cell {
  std::size_t patient = 0;
  std::size_t modality = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

class PresenceMask {
 public:
  PresenceMask() = default;
  PresenceMask(std::size_t patients, std::size_t modalities, bool present = true);

  std::size_t patients() const { return patients_; }
  std::size_t modalities() const { return modalities_; }
  bool present(std::size_t p, std::size_t m) const;
  bool present(Cell c) const { return present(c.patient, c.modality); }
  void set(std::size_t p, std::size_t m, bool value);
  void set(Cell c, bool value) { set(c.patient, c.modality, value); }

  bool full() const;
  std::size_t count() const;
  std::size_t present_in_patient(std::size_t p) const;
  /// Present cells in patient-major order; this is the row order of Z.
  std::vector<Cell> present_cells() const;
  std::vector<Cell> absent_cells() const;
  /// Throws ValidationError naming the first patient with nothing present.
  void require_each_patient_present() const;

  friend bool operator==(const PresenceMask&, const PresenceMask&) = default;

 private:
  std::size_t patients_ = 0, modalities_ = 0;
  std::vector<bool> cells_;
};

Matrix patient_kernel(const Matrix& features);
Matrix modality_kernel(const Matrix& lower);
/// Lower-triangular factor from unconstrained storage (softplus diagonal).
Matrix lower_from_raw(const Matrix& raw);
/// Inverse of the diagonal reparameterization, for initialization.
Matrix raw_from_lower(const Matrix& lower);
Matrix kron(const Matrix& a, const Matrix& b);

/// Covariance of the present samples: rows/cols follow mask.present_cells().
Matrix present_covariance(const Matrix& kx, const Matrix& kw, const PresenceMask& mask);

struct LogDensity {
  double value = 0.0;
  Matrix d_z;   // N_present x L
  Matrix d_kx;  // P x P
  Matrix d_kw;  // M x M
};

/// sum_l log N(z^l; 0, K_S + jitter I). Full masks use the Kronecker
/// eigendecomposition; partial masks fall back to a dense Cholesky of K_S.
double kron_logdensity(const Matrix& z, const Matrix& kx, const Matrix& kw,
                       const PresenceMask& mask, double jitter);
LogDensity kron_logdensity_grad(const Matrix& z, const Matrix& kx, const Matrix& kw,
                                const PresenceMask& mask, double jitter);

struct Prediction {
  Vector mean;            // L
  double variance = 0.0;  // shared by all latent columns
};

/// Posterior of the latent row at an absent cell given the present rows Z.
Prediction gp_predict(Cell target, const Matrix& z, const Matrix& kx, const Matrix& kw,
                      const PresenceMask& mask, double jitter);

/// Draws N x L from the full-grid prior via the Kronecker eigen-factorization.
Matrix sample_prior(const Matrix& kx, const Matrix& kw, double jitter, std::size_t latent_dim,
                    std::uint64_t seed);

/// Learnable prior parameters: patient features X (P x Q) and the raw
/// modality factor (M x M, strict lower part free, softplus diagonal).
struct GpParams {
  ad::Tensor features;
  ad::Tensor modality_raw;
  double jitter = 1e-4;

  std::size_t patients() const { return features.dim(0); }
  std::size_t feature_dim() const { return features.dim(1); }
  std::size_t modalities() const { return modality_raw.dim(0); }

  Matrix patient_kernel() const;
  Matrix modality_kernel() const;
};

/// X ~ N(0, feature_scale^2 / Q) entrywise; modality factor initialized to modality_scale * I.
GpParams init_gp_params(std::size_t patients, std::size_t modalities, std::size_t feature_dim,
                        double jitter, double feature_scale, double modality_scale,
                        std::uint64_t seed);

// Graph ops.
ad::Tensor patient_kernel(const ad::Tensor& features);
ad::Tensor modality_kernel(const ad::Tensor& modality_raw);
/// Differentiable w.r.t. z [N_present, L], kx [P,P], kw [M,M]; evaluated in double.
ad::Tensor kron_logdensity(const ad::Tensor& z, const ad::Tensor& kx, const ad::Tensor& kw,
                           const PresenceMask& mask, double jitter);

Matrix to_matrix(const ad::Tensor& t);
std::vector<float> to_floats(const Matrix& m);

}  // namespace mgpvae::gp
