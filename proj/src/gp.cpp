#include "mgpvae/gp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "mgpvae/errors.hpp"
#include "mgpvae/ops.hpp"

namespace mgpvae::gp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void check_square(const Matrix& m, std::size_t n, const char* what) {
  if (static_cast<std::size_t>(m.rows()) != n || static_cast<std::size_t>(m.cols()) != n) {
    std::ostringstream os;
    os << what << " must be " << n << "x" << n << ", got " << m.rows() << "x" << m.cols();
    throw ShapeError(os.str());
  }
}

void check_inputs(const Matrix& z, const Matrix& kx, const Matrix& kw, const PresenceMask& mask,
                  double jitter) {
  check_square(kx, mask.patients(), "patient kernel");
  check_square(kw, mask.modalities(), "modality kernel");
  if (static_cast<std::size_t>(z.rows()) != mask.count())
    throw ShapeError("latent matrix has " + std::to_string(z.rows()) + " rows but mask has " +
                     std::to_string(mask.count()) + " present samples");
  if (!(jitter > 0.0)) throw ValidationError("jitter must be positive");
}

[[noreturn]] void throw_not_pd(const Matrix& a, const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  std::ostringstream os;
  os << "Cholesky of " << what << " failed; smallest eigenvalue estimate "
     << es.eigenvalues().minCoeff();
  throw NumericalError(os.str());
}

Eigen::LLT<Matrix> factorize(const Matrix& a, const char* what) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw_not_pd(a, what);
  return llt;
}

struct KronEigen {
  Matrix ux, uw;
  Vector lx, lw;
  Matrix d;  // d(i,j) = lx[i]*lw[j] + jitter
};

KronEigen kron_eigen(const Matrix& kx, const Matrix& kw, double jitter) {
  Eigen::SelfAdjointEigenSolver<Matrix> ex(kx), ew(kw);
  if (ex.info() != Eigen::Success || ew.info() != Eigen::Success)
    throw NumericalError("eigendecomposition of a kernel factor failed");
  KronEigen e{ex.eigenvectors(), ew.eigenvectors(), ex.eigenvalues(), ew.eigenvalues(), {}};
  e.d = e.lx * e.lw.transpose();
  e.d.array() += jitter;
  if (e.d.minCoeff() <= 0.0) {
    std::ostringstream os;
    os << "Kronecker covariance not positive definite after jitter; smallest eigenvalue "
          "estimate "
       << e.d.minCoeff();
    throw NumericalError(os.str());
  }
  return e;
}

// Row-major P x M view of one latent column.
Matrix column_grid(const Matrix& z, Eigen::Index l, std::size_t p, std::size_t m) {
  Matrix g(p, m);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < m; ++j) g(i, j) = z(i * m + j, l);
  return g;
}

LogDensity logdensity_kronecker(const Matrix& z, const Matrix& kx, const Matrix& kw,
                                double jitter, bool want_grad) {
  const std::size_t np = kx.rows(), nm = kw.rows();
  const Eigen::Index nl = z.cols();
  KronEigen e = kron_eigen(kx, kw, jitter);
  LogDensity out;
  double quad = 0.0;
  if (want_grad) {
    out.d_z.resize(z.rows(), nl);
    out.d_kx = Matrix::Zero(np, np);
    out.d_kw = Matrix::Zero(nm, nm);
  }
  for (Eigen::Index l = 0; l < nl; ++l) {
    Matrix rotated = e.ux.transpose() * column_grid(z, l, np, nm) * e.uw;
    Matrix scaled = rotated.array() / e.d.array();
    quad += (rotated.array() * scaled.array()).sum();
    if (!want_grad) continue;
    Matrix alpha = e.ux * scaled * e.uw.transpose();  // (K + jitter I)^{-1} z^l as a grid
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < nm; ++j) out.d_z(i * nm + j, l) = -alpha(i, j);
    out.d_kx.noalias() += 0.5 * alpha * kw * alpha.transpose();
    out.d_kw.noalias() += 0.5 * alpha.transpose() * kx * alpha;
  }
  const double logdet = e.d.array().log().sum();
  const double n = static_cast<double>(np * nm);
  out.value = -0.5 * quad - 0.5 * nl * logdet - 0.5 * nl * n * kLog2Pi;
  if (want_grad) {
    Matrix inv_d = e.d.cwiseInverse();
    Vector cx = inv_d * e.lw;              // sum_j lw_j / d_ij
    Vector cw = inv_d.transpose() * e.lx;  // sum_i lx_i / d_ij
    out.d_kx -= 0.5 * nl * e.ux * cx.asDiagonal() * e.ux.transpose();
    out.d_kw -= 0.5 * nl * e.uw * cw.asDiagonal() * e.uw.transpose();
  }
  return out;
}

LogDensity logdensity_dense(const Matrix& z, const Matrix& kx, const Matrix& kw,
                            const PresenceMask& mask, double jitter, bool want_grad) {
  const auto cells = mask.present_cells();
  const Eigen::Index n = static_cast<Eigen::Index>(cells.size());
  const Eigen::Index nl = z.cols();
  Matrix a = present_covariance(kx, kw, mask);
  a.diagonal().array() += jitter;
  auto llt = factorize(a, "masked prior covariance");
  Matrix alpha = llt.solve(z);
  const Matrix& lower = llt.matrixL();
  const double logdet = 2.0 * lower.diagonal().array().log().sum();
  LogDensity out;
  out.value = -0.5 * (z.array() * alpha.array()).sum() - 0.5 * nl * logdet -
              0.5 * nl * static_cast<double>(n) * kLog2Pi;
  if (!want_grad) return out;

  out.d_z = -alpha;
  Matrix g = 0.5 * (alpha * alpha.transpose() - nl * llt.solve(Matrix::Identity(n, n)));
  out.d_kx = Matrix::Zero(kx.rows(), kx.cols());
  out.d_kw = Matrix::Zero(kw.rows(), kw.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& ci = cells[i];
      const auto& cj = cells[j];
      out.d_kx(ci.patient, cj.patient) += g(i, j) * kw(ci.modality, cj.modality);
      out.d_kw(ci.modality, cj.modality) += g(i, j) * kx(ci.patient, cj.patient);
    }
  return out;
}

LogDensity logdensity(const Matrix& z, const Matrix& kx, const Matrix& kw,
                      const PresenceMask& mask, double jitter, bool want_grad) {
  check_inputs(z, kx, kw, mask, jitter);
  if (mask.full()) return logdensity_kronecker(z, kx, kw, jitter, want_grad);
  return logdensity_dense(z, kx, kw, mask, jitter, want_grad);
}

}  // namespace

PresenceMask::PresenceMask(std::size_t patients, std::size_t modalities, bool present)
    : patients_(patients), modalities_(modalities), cells_(patients * modalities, present) {}

bool PresenceMask::present(std::size_t p, std::size_t m) const {
  if (p >= patients_ || m >= modalities_)
    throw ValidationError("cell " + std::to_string(p) + ":" + std::to_string(m) +
                          " outside the " + std::to_string(patients_) + "x" +
                          std::to_string(modalities_) + " grid");
  return cells_[p * modalities_ + m];
}

void PresenceMask::set(std::size_t p, std::size_t m, bool value) {
  present(p, m);
  cells_[p * modalities_ + m] = value;
}

bool PresenceMask::full() const { return count() == cells_.size(); }

std::size_t PresenceMask::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), true));
}

std::size_t PresenceMask::present_in_patient(std::size_t p) const {
  std::size_t n = 0;
  for (std::size_t m = 0; m < modalities_; ++m) n += present(p, m) ? 1 : 0;
  return n;
}

std::vector<Cell> PresenceMask::present_cells() const {
  std::vector<Cell> out;
  for (std::size_t p = 0; p < patients_; ++p)
    for (std::size_t m = 0; m < modalities_; ++m)
      if (cells_[p * modalities_ + m]) out.push_back({p, m});
  return out;
}

std::vector<Cell> PresenceMask::absent_cells() const {
  std::vector<Cell> out;
  for (std::size_t p = 0; p < patients_; ++p)
    for (std::size_t m = 0; m < modalities_; ++m)
      if (!cells_[p * modalities_ + m]) out.push_back({p, m});
  return out;
}

void PresenceMask::require_each_patient_present() const {
  for (std::size_t p = 0; p < patients_; ++p)
    if (present_in_patient(p) == 0)
      throw ValidationError("patient " + std::to_string(p) + " has no present modality");
}

Matrix patient_kernel(const Matrix& features) { return features * features.transpose(); }

Matrix modality_kernel(const Matrix& lower) { return lower * lower.transpose(); }

Matrix lower_from_raw(const Matrix& raw) {
  Matrix l = Matrix::Zero(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) l(i, j) = (i == j) ? softplus(raw(i, j)) : raw(i, j);
  return l;
}

Matrix raw_from_lower(const Matrix& lower) {
  Matrix raw = Matrix::Zero(lower.rows(), lower.cols());
  for (Eigen::Index i = 0; i < lower.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      if (i == j) {
        if (!(lower(i, i) > 0.0)) throw ValidationError("modality factor diagonal must be positive");
        raw(i, i) = lower(i, i) + std::log(-std::expm1(-lower(i, i)));
      } else {
        raw(i, j) = lower(i, j);
      }
    }
  return raw;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

Matrix present_covariance(const Matrix& kx, const Matrix& kw, const PresenceMask& mask) {
  const auto cells = mask.present_cells();
  const Eigen::Index n = static_cast<Eigen::Index>(cells.size());
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      k(i, j) = kx(cells[i].patient, cells[j].patient) * kw(cells[i].modality, cells[j].modality);
  return k;
}

double kron_logdensity(const Matrix& z, const Matrix& kx, const Matrix& kw,
                       const PresenceMask& mask, double jitter) {
  return logdensity(z, kx, kw, mask, jitter, false).value;
}

LogDensity kron_logdensity_grad(const Matrix& z, const Matrix& kx, const Matrix& kw,
                                const PresenceMask& mask, double jitter) {
  return logdensity(z, kx, kw, mask, jitter, true);
}

Prediction gp_predict(Cell target, const Matrix& z, const Matrix& kx, const Matrix& kw,
                      const PresenceMask& mask, double jitter) {
  check_inputs(z, kx, kw, mask, jitter);
  if (mask.present(target))
    throw ValidationError("target " + std::to_string(target.patient) + ":" +
                          std::to_string(target.modality) + " is present, nothing to predict");
  if (mask.present_in_patient(target.patient) == 0)
    throw ValidationError("target patient " + std::to_string(target.patient) +
                          " has no present modality to condition on");
  const auto cells = mask.present_cells();
  const Eigen::Index n = static_cast<Eigen::Index>(cells.size());
  Matrix a = present_covariance(kx, kw, mask);
  a.diagonal().array() += jitter;
  Vector cross(n);
  for (Eigen::Index i = 0; i < n; ++i)
    cross(i) = kx(target.patient, cells[i].patient) * kw(target.modality, cells[i].modality);
  auto llt = factorize(a, "conditioning covariance");
  Vector weights = llt.solve(cross);
  Prediction out;
  out.mean = z.transpose() * weights;
  out.variance = kx(target.patient, target.patient) * kw(target.modality, target.modality) +
                 jitter - cross.dot(weights);
  return out;
}

Matrix sample_prior(const Matrix& kx, const Matrix& kw, double jitter, std::size_t latent_dim,
                    std::uint64_t seed) {
  if (!(jitter > 0.0)) throw ValidationError("jitter must be positive");
  KronEigen e = kron_eigen(kx, kw, jitter);
  const std::size_t np = kx.rows(), nm = kw.rows();
  Matrix root = e.d.cwiseSqrt();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix out(np * nm, latent_dim);
  Matrix eps(np, nm);
  for (std::size_t l = 0; l < latent_dim; ++l) {
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < nm; ++j) eps(i, j) = normal(rng);
    Matrix grid = e.ux * root.cwiseProduct(eps) * e.uw.transpose();
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < nm; ++j) out(i * nm + j, l) = grid(i, j);
  }
  return out;
}

Matrix to_matrix(const ad::Tensor& t) {
  if (t.rank() != 2) throw ShapeError("expected a matrix, got " + ad::to_string(t.shape()));
  const std::size_t r = t.dim(0), c = t.dim(1);
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = t.data()[i * c + j];
  return m;
}

std::vector<float> to_floats(const Matrix& m) {
  std::vector<float> v(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = static_cast<float>(m(i, j));
  return v;
}

Matrix GpParams::patient_kernel() const { return gp::patient_kernel(to_matrix(features)); }

Matrix GpParams::modality_kernel() const {
  return gp::modality_kernel(lower_from_raw(to_matrix(modality_raw)));
}

GpParams init_gp_params(std::size_t patients, std::size_t modalities, std::size_t feature_dim,
                        double jitter, double feature_scale, double modality_scale,
                        std::uint64_t seed) {
  if (patients == 0 || modalities == 0 || feature_dim == 0)
    throw ValidationError("GP dimensions must be positive");
  if (!(jitter > 0.0)) throw ValidationError("jitter must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, feature_scale / std::sqrt(double(feature_dim)));
  std::vector<float> x(patients * feature_dim);
  for (auto& v : x) v = static_cast<float>(normal(rng));
  Matrix raw = raw_from_lower(modality_scale * Matrix::Identity(modalities, modalities));
  GpParams params;
  params.features = ad::Tensor::parameter({patients, feature_dim}, std::move(x));
  params.modality_raw = ad::Tensor::parameter({modalities, modalities}, to_floats(raw));
  params.jitter = jitter;
  return params;
}

ad::Tensor patient_kernel(const ad::Tensor& features) { return ad::matmul_nt(features, features); }

ad::Tensor modality_kernel(const ad::Tensor& modality_raw) {
  ad::Tensor lower = ad::lower_factor(modality_raw);
  return ad::matmul_nt(lower, lower);
}

ad::Tensor kron_logdensity(const ad::Tensor& z, const ad::Tensor& kx, const ad::Tensor& kw,
                           const PresenceMask& mask, double jitter) {
  LogDensity ld = logdensity(to_matrix(z), to_matrix(kx), to_matrix(kw), mask, jitter,
                             z.requires_grad() || kx.requires_grad() || kw.requires_grad());
  auto grads = std::make_shared<LogDensity>(std::move(ld));
  const double value = grads->value;
  return ad::make_scalar_result(
      value, {z, kx, kw},
      [grads](ad::detail::Node& self) {
        const double up = self.grad[0];
        const Matrix* parts[3] = {&grads->d_z, &grads->d_kx, &grads->d_kw};
        for (std::size_t k = 0; k < 3; ++k) {
          if (!self.inputs[k]->requires_grad) continue;
          auto& g = self.inputs[k]->grad_buffer();
          const Matrix& d = *parts[k];
          for (Eigen::Index i = 0; i < d.rows(); ++i)
            for (Eigen::Index j = 0; j < d.cols(); ++j)
              g[i * d.cols() + j] += static_cast<float>(up * d(i, j));
        }
      },
      "kron_logdensity");
}

}  // namespace mgpvae::gp
