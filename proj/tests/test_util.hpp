#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mgpvae/gp.hpp"
#include "mgpvae/tensor.hpp"

namespace testutil {

inline std::vector<float> random_floats(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(normal(rng));
  return v;
}

inline mgpvae::ad::Tensor random_param(mgpvae::ad::Shape shape, std::uint64_t seed, double scale = 1.0) {
  const auto n = mgpvae::ad::numel(shape);
  return mgpvae::ad::Tensor::parameter(std::move(shape), random_floats(n, seed, scale));
}

inline mgpvae::gp::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  mgpvae::gp::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

/// A * A^T + shift * I.
inline mgpvae::gp::Matrix random_pd(Eigen::Index n, std::uint64_t seed, double shift = 0.5) {
  mgpvae::gp::Matrix a = random_matrix(n, n, seed);
  return a * a.transpose() + shift * mgpvae::gp::Matrix::Identity(n, n);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mgpvae_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
