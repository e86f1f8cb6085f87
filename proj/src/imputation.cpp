#include "mgpvae/imputation.hpp"

#include <sstream>

#include "mgpvae/errors.hpp"

namespace mgpvae::impute {

namespace {

constexpr std::size_t kEncodeChunk = 8;

std::string cell_name(gp::Cell c) {
  return std::to_string(c.patient) + ":" + std::to_string(c.modality);
}

std::vector<Imputed> decode_rows(const train::Model& model, const std::vector<gp::Cell>& targets,
                                 const gp::Matrix& latents, const std::vector<double>& variances) {
  auto volumes = decode_latents(model, latents);
  std::vector<Imputed> out;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    Imputed r;
    r.target = targets[t];
    r.volume = std::move(volumes[t]);
    r.latent.resize(latents.cols());
    for (Eigen::Index j = 0; j < latents.cols(); ++j) r.latent[j] = static_cast<float>(latents(t, j));
    r.latent_variance = variances.empty() ? 0.0 : variances[t];
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

void ImputationRequest::validate() const {
  if (model == nullptr || grid == nullptr)
    throw ValidationError("imputation request needs a model and a dataset");
  grid->validate();
  if (model->config.input_side != grid->side)
    throw ValidationError("checkpoint expects side " + std::to_string(model->config.input_side) +
                          " but dataset has side " + std::to_string(grid->side));
  if (model->gp.patients() != grid->patients || model->gp.modalities() != grid->modalities)
    throw ValidationError("checkpoint GP is sized for a different patient/modality grid");
  std::vector<std::string> bad;
  for (const auto& c : targets) {
    if (c.patient >= grid->patients || c.modality >= grid->modalities)
      bad.push_back(cell_name(c) + " (outside grid)");
    else if (grid->mask.present(c))
      bad.push_back(cell_name(c) + " (present)");
    else if (grid->mask.present_in_patient(c.patient) == 0)
      bad.push_back(cell_name(c) + " (patient has no present modality)");
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "invalid imputation targets:";
    for (const auto& b : bad) os << ' ' << b;
    throw ValidationError(os.str());
  }
}

gp::Matrix encode_present(const train::Model& model, const ViewGrid& grid) {
  const auto cells = grid.mask.present_cells();
  const std::size_t l = model.config.latent_dim;
  const std::size_t s = grid.side;
  const std::size_t k = s * s * s;
  gp::Matrix mu(cells.size(), l);
  for (std::size_t begin = 0; begin < cells.size(); begin += kEncodeChunk) {
    const std::size_t end = std::min(cells.size(), begin + kEncodeChunk);
    std::vector<float> values;
    values.reserve((end - begin) * k);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& v = grid.at(cells[i]).voxels;
      values.insert(values.end(), v.begin(), v.end());
    }
    ad::Tensor batch({end - begin, 1, s, s, s}, std::move(values));
    net::Posterior post = net::encode(batch, model.encoder, model.config);
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < l; ++j) mu(i, j) = post.mu.data()[(i - begin) * l + j];
  }
  return mu;
}

std::vector<Volume> decode_latents(const train::Model& model, const gp::Matrix& latents) {
  const std::size_t l = model.config.latent_dim;
  const std::size_t s = model.config.input_side;
  const std::size_t k = s * s * s;
  if (static_cast<std::size_t>(latents.cols()) != l)
    throw ShapeError("latent rows must have length " + std::to_string(l));
  std::vector<Volume> out;
  const std::size_t rows = latents.rows();
  for (std::size_t begin = 0; begin < rows; begin += kEncodeChunk) {
    const std::size_t end = std::min(rows, begin + kEncodeChunk);
    std::vector<float> z;
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < l; ++j) z.push_back(static_cast<float>(latents(i, j)));
    ad::Tensor decoded = net::decode(ad::Tensor({end - begin, l}, std::move(z)), model.decoder,
                                     model.config);
    auto data = decoded.data();
    for (std::size_t i = 0; i < end - begin; ++i)
      out.emplace_back(s, std::vector<float>(data.begin() + i * k, data.begin() + (i + 1) * k));
  }
  return out;
}

std::vector<Imputed> impute(const ImputationRequest& request) {
  request.validate();
  if (request.targets.empty()) return {};
  const auto& model = *request.model;
  const auto& grid = *request.grid;
  gp::Matrix z = encode_present(model, grid);
  gp::Matrix kx = model.gp.patient_kernel();
  gp::Matrix kw = model.gp.modality_kernel();
  gp::Matrix latents(request.targets.size(), model.config.latent_dim);
  std::vector<double> variances;
  for (std::size_t t = 0; t < request.targets.size(); ++t) {
    const auto& target = request.targets[t];
    gp::Prediction pred;
    try {
      pred = gp::gp_predict(target, z, kx, kw, grid.mask, model.gp.jitter);
    } catch (const NumericalError& e) {
      throw NumericalError("GP prediction for target " + cell_name(target) + " failed: " + e.what());
    }
    latents.row(t) = pred.mean.transpose();
    variances.push_back(pred.variance);
  }
  return decode_rows(model, request.targets, latents, variances);
}

std::vector<Imputed> interp_baseline(const ImputationRequest& request) {
  request.validate();
  if (request.targets.empty()) return {};
  const auto& model = *request.model;
  const auto& grid = *request.grid;
  const auto cells = grid.mask.present_cells();
  gp::Matrix z = encode_present(model, grid);
  gp::Matrix latents = gp::Matrix::Zero(request.targets.size(), model.config.latent_dim);
  for (std::size_t t = 0; t < request.targets.size(); ++t) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (cells[i].patient == request.targets[t].patient) {
        latents.row(t) += z.row(i);
        ++count;
      }
    latents.row(t) /= static_cast<double>(count);
  }
  return decode_rows(model, request.targets, latents, {});
}

std::vector<Imputed> mean_baseline(const ImputationRequest& request) {
  request.validate();
  const auto& grid = *request.grid;
  const std::size_t k = grid.side * grid.side * grid.side;
  std::vector<Imputed> out;
  for (const auto& target : request.targets) {
    std::vector<double> acc(k, 0.0);
    std::size_t count = 0;
    for (std::size_t p = 0; p < grid.patients; ++p) {
      if (!grid.mask.present(p, target.modality)) continue;
      const auto& v = grid.at(p, target.modality).voxels;
      for (std::size_t i = 0; i < k; ++i) acc[i] += v[i];
      ++count;
    }
    if (count == 0)
      throw ValidationError("modality " + std::to_string(target.modality) +
                            " has no present volume to average");
    std::vector<float> mean(k);
    for (std::size_t i = 0; i < k; ++i) mean[i] = static_cast<float>(acc[i] / count);
    Imputed r;
    r.target = target;
    r.volume = Volume(grid.side, std::move(mean));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mgpvae::impute
