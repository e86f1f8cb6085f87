#include "mgpvae/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mgpvae/errors.hpp"
#include "mgpvae/rng.hpp"

namespace mgpvae::synth {

void PhantomSpec::validate() const {
  if (patients < 2) throw ValidationError("data.patients must be >= 2");
  if (modalities < 2) throw ValidationError("data.modalities must be >= 2");
  if (side < 4 || (side & (side - 1)) != 0)
    throw ValidationError("data.side must be a power of two >= 4");
  if (gains.size() != modalities || biases.size() != modalities || gammas.size() != modalities)
    throw ValidationError("data.gains, data.biases and data.gammas need one entry per modality (" +
                          std::to_string(modalities) + ")");
  for (double g : gains)
    if (g == 0.0 || !std::isfinite(g)) throw ValidationError("data.gains entries must be nonzero");
  for (double g : gammas)
    if (!(g > 0.0)) throw ValidationError("data.gammas entries must be positive");
  if (!(noise_sd >= 0.0)) throw ValidationError("data.noise_sd must be >= 0");
}

namespace {

struct Blob {
  double cx, cy, cz, radius, amplitude;
};

std::vector<float> anatomy_field(const PhantomSpec& spec, std::size_t patient) {
  auto rng = keyed_rng({spec.seed, 0xA7A70, patient});
  const double s = static_cast<double>(spec.side);
  std::uniform_real_distribution<double> centre(0.3 * s, 0.7 * s);
  std::uniform_real_distribution<double> radius(0.10 * s, 0.22 * s);
  std::uniform_real_distribution<double> amp(0.3, 1.0);

  std::vector<Blob> blobs;
  for (std::size_t b = 0; b < spec.blobs; ++b)
    blobs.push_back({centre(rng), centre(rng), centre(rng), radius(rng), amp(rng)});
  if (spec.tumor) {
    std::uniform_real_distribution<double> tumour_radius(0.06 * s, 0.10 * s);
    blobs.push_back({centre(rng), centre(rng), centre(rng), tumour_radius(rng), 1.5});
  }

  const std::size_t n = spec.side;
  std::vector<float> field(n * n * n, 0.0f);
  double peak = 0.0;
  for (std::size_t z = 0; z < n; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        double v = 0.0;
        for (const auto& b : blobs) {
          double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy, dz = z + 0.5 - b.cz;
          v += b.amplitude * std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * b.radius * b.radius));
        }
        field[(z * n + y) * n + x] = static_cast<float>(v);
        peak = std::max(peak, v);
      }
  if (peak > 0.0)
    for (auto& v : field) v = static_cast<float>(v / peak);
  return field;
}

}  // namespace

GeneratedData generate(const PhantomSpec& spec) {
  spec.validate();
  GeneratedData out;
  out.grid = ViewGrid(spec.patients, spec.modalities, spec.side);
  const std::size_t nvox = spec.side * spec.side * spec.side;

  std::vector<std::vector<double>> raw(spec.patients * spec.modalities);
  for (std::size_t p = 0; p < spec.patients; ++p) {
    out.anatomy.push_back(anatomy_field(spec, p));
    const auto& a = out.anatomy.back();
    for (std::size_t m = 0; m < spec.modalities; ++m) {
      auto rng = keyed_rng({spec.seed, 0x0015E, p, m});
      std::normal_distribution<double> noise(0.0, 1.0);
      auto& v = raw[p * spec.modalities + m];
      v.resize(nvox);
      for (std::size_t i = 0; i < nvox; ++i) {
        double contrast = spec.gains[m] * std::pow(static_cast<double>(a[i]), spec.gammas[m]);
        v[i] = contrast + spec.biases[m] + spec.noise_sd * noise(rng);
      }
    }
  }

  for (std::size_t m = 0; m < spec.modalities; ++m) {
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t p = 0; p < spec.patients; ++p)
      for (double v : raw[p * spec.modalities + m]) sum += v;
    const double count = static_cast<double>(spec.patients * nvox);
    const double mean = sum / count;
    for (std::size_t p = 0; p < spec.patients; ++p)
      for (double v : raw[p * spec.modalities + m]) sumsq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sumsq / count);
    const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
    for (std::size_t p = 0; p < spec.patients; ++p) {
      const auto& v = raw[p * spec.modalities + m];
      std::vector<float> vox(nvox);
      for (std::size_t i = 0; i < nvox; ++i) vox[i] = static_cast<float>((v[i] - mean) * inv);
      out.grid.at(p, m) = Volume(spec.side, std::move(vox));
    }
  }
  return out;
}

gp::PresenceMask mask_dataset(std::size_t patients, std::size_t modalities,
                              const MaskPolicy& policy, std::uint64_t seed) {
  gp::PresenceMask mask(patients, modalities, true);
  if (const auto* drop = std::get_if<DropPerPatient>(&policy)) {
    if (drop->count >= modalities)
      throw ValidationError("cannot drop " + std::to_string(drop->count) + " of " +
                            std::to_string(modalities) +
                            " modalities: every patient keeps at least one");
    auto rng = keyed_rng({seed, 0xD809});
    for (std::size_t p = 0; p < patients; ++p) {
      std::vector<std::size_t> order(modalities);
      for (std::size_t m = 0; m < modalities; ++m) order[m] = m;
      for (std::size_t i = 0; i < drop->count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, modalities - 1);
        std::swap(order[i], order[pick(rng)]);
        mask.set(p, order[i], false);
      }
    }
  } else {
    for (const auto& c : std::get<ExplicitCells>(policy).absent) mask.set(c, false);
  }
  mask.require_each_patient_present();
  return mask;
}

gp::PresenceMask mask_dataset(const ViewGrid& grid, const MaskPolicy& policy,
                              std::uint64_t seed) {
  return mask_dataset(grid.patients, grid.modalities, policy, seed);
}

}  // namespace mgpvae::synth
