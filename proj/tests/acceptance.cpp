// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "mgpvae/cli.hpp"
#include "mgpvae/io.hpp"
#include "mgpvae/metrics.hpp"
#include "mgpvae/net.hpp"
#include "mgpvae/ops.hpp"
#include "mgpvae/synthdata.hpp"
#include "mgpvae/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mgpvae;
using gp::Matrix;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

Outcome gradients() {
  const auto t0 = Clock::now();
  auto groups = cli::tiny_gradcheck(0, 1e-3);
  const double secs = seconds_since(t0);
  bool ok = groups.size() == 5 && secs < 300.0;
  std::string detail;
  for (const auto& g : groups) {
    ok = ok && g.ok && g.rel_error < 1e-3;
    detail += g.group + "=" + fmt(g.rel_error) + " ";
  }
  return {ok, detail + "in " + fmt(secs) + "s"};
}

Outcome kronecker_oracle() {
  double worst = 0.0;
  std::size_t cases = 0;
  std::mt19937_64 rng(2);
  for (std::size_t p = 2; p <= 4; ++p)
    for (std::size_t m = 2; m <= 4; ++m) {
      const std::uint64_t seed = 100 * p + m;
      const Matrix kx = testutil::random_pd(p, seed), kw = testutil::random_pd(m, seed + 1);
      const Matrix z = testutil::random_matrix(p * m, 5, seed + 2);
      const gp::PresenceMask full(p, m);
      worst = std::max(worst, oracle::rel_diff(gp::kron_logdensity(z, kx, kw, full, 1e-4),
                                               oracle::kron_logdensity(z, kx, kw, full, 1e-4)));
      ++cases;
      auto masks = oracle::valid_masks(p, m);
      std::shuffle(masks.begin(), masks.end(), rng);
      masks.resize(std::min<std::size_t>(masks.size(), 64));
      for (const auto& mask : masks) {
        const Matrix zp = testutil::random_matrix(mask.count(), 5, seed + 3 + cases);
        worst = std::max(worst, oracle::rel_diff(gp::kron_logdensity(zp, kx, kw, mask, 1e-4),
                                                 oracle::kron_logdensity(zp, kx, kw, mask, 1e-4)));
        ++cases;
      }
    }
  return {worst < 1e-8, std::to_string(cases) + " cases, worst rel " + fmt(worst)};
}

Outcome regression_oracle() {
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t p = 1; p <= 8; ++p)
    for (std::size_t m = 2; p * m <= 16; ++m) {
      const std::uint64_t seed = 1000 + 17 * p + m;
      const Matrix kx = testutil::random_pd(p, seed), kw = testutil::random_pd(m, seed + 1);
      for (const auto& mask : oracle::valid_masks(p, m)) {
        const auto absent = mask.absent_cells();
        if (absent.empty()) continue;
        const Matrix z = testutil::random_matrix(mask.count(), 3, seed + cases);
        for (const auto& target : absent) {
          auto got = gp::gp_predict(target, z, kx, kw, mask, 1e-4);
          auto ref = oracle::gp_regression(target, z, kx, kw, mask, 1e-4);
          worst = std::max({worst, oracle::rel_diff(got.mean, ref.mean),
                            oracle::rel_diff(got.variance, ref.variance)});
          ++cases;
        }
      }
    }
  return {worst < 1e-8, std::to_string(cases) + " predictions, worst rel " + fmt(worst)};
}

Matrix rows_of(const ad::Tensor& t) {
  const std::size_t r = t.dim(0), c = t.size() / r;
  Matrix out(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = t.data()[i * c + j];
  return out;
}

/// Single-sample negative ELBO of a Gaussian-decoder VAE with a N(0, I) prior,
/// written as -log p(x|z) - log p(z) + log q(z|x).
double standard_vae_neg_elbo(const train::Model& model, const train::TrainingData& data,
                             const ad::Tensor& upsilon) {
  auto post = net::encode(data.volumes, model.encoder, model.config);
  const Matrix mu = rows_of(post.mu), sigma = rows_of(post.sigma), eps = rows_of(upsilon);
  const Matrix z = mu + eps.cwiseProduct(sigma);
  std::vector<float> zf;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) zf.push_back(static_cast<float>(z(i, j)));
  auto xhat = net::decode(ad::Tensor({std::size_t(z.rows()), std::size_t(z.cols())}, zf),
                          model.decoder, model.config);
  const double sy = std::exp(double(model.log_sigma_y.data()[0]));
  double log_px = 0.0;
  for (std::size_t i = 0; i < xhat.size(); ++i) {
    const double r = double(data.volumes.data()[i]) - double(xhat.data()[i]);
    log_px += -0.5 * r * r / (sy * sy) - std::log(sy) - 0.5 * oracle::kLog2Pi;
  }
  double log_pz = 0.0, log_qz = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      log_pz += -0.5 * z(i, j) * z(i, j) - 0.5 * oracle::kLog2Pi;
      const double u = (z(i, j) - mu(i, j)) / sigma(i, j);
      log_qz += -0.5 * u * u - std::log(sigma(i, j)) - 0.5 * oracle::kLog2Pi;
    }
  return -log_px - log_pz + log_qz;
}

Outcome vae_degeneration() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    synth::PhantomSpec spec;
    spec.patients = 3;
    spec.modalities = 2;
    spec.side = 8;
    spec.blobs = 2;
    spec.gains = {1.0, -1.0};
    spec.biases = {0.0, 0.3};
    spec.gammas = {1.0, 2.0};
    spec.seed = seed;
    auto data = train::make_training_data(synth::generate(spec).grid);
    auto model = train::init_model({8, 2, 4, 2, 4}, {3, 1e-4, 1.0, 1.0}, 3, 2, 0.7 + 0.2 * seed,
                                   seed + 50);
    // K_x = K_w = I: X = I_3 and an identity modality factor, no jitter.
    std::vector<float> eye(9, 0.0f);
    eye[0] = eye[4] = eye[8] = 1.0f;
    model.gp.features = ad::Tensor::parameter({3, 3}, eye);
    model.gp.modality_raw =
        ad::Tensor::parameter({2, 2}, gp::to_floats(gp::raw_from_lower(Matrix::Identity(2, 2))));
    model.gp.jitter = 1e-12;
    ad::Tensor eps = train::epoch_noise(seed, 3, 0, data.count(), model.config.latent_dim);
    const double ours = train::loss(model, data, eps, train::Prior::Gp).value();
    // The training loss omits terms that no parameter touches: the decoder's
    // per-voxel 2*pi normalizer and log q's -|eps|^2/2 - N*L/2*log(2*pi) pieces.
    const double n = double(data.count());
    double eps_sq = 0.0;
    for (float e : eps.data()) eps_sq += double(e) * e;
    const double dropped = 0.5 * n * double(data.sample_size()) * oracle::kLog2Pi -
                           0.5 * n * double(model.config.latent_dim) * oracle::kLog2Pi -
                           0.5 * eps_sq;
    const double ref = standard_vae_neg_elbo(model, data, eps) - dropped;
    worst = std::max(worst, oracle::rel_diff(ours, ref));
  }
  return {worst < 1e-6, "worst rel " + fmt(worst)};
}

struct Run {
  int code;
  std::string out, err;
};

template <class F>
Run run(F&& body) {
  std::ostringstream out, err;
  const int code = cli::guarded(err, [&] { return body(cli::Streams{out, err}); });
  return {code, out.str(), err.str()};
}

std::vector<train::EpochRecord> read_log(const fs::path& path) {
  std::vector<train::EpochRecord> records;
  std::istringstream in(io::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream f(line);
    train::EpochRecord r;
    f >> r.stage >> r.epoch >> r.total >> r.recon >> r.gp >> r.entropy >> r.noise >> r.seconds;
    if (f) records.push_back(r);
  }
  return records;
}

std::map<std::string, std::vector<float>> autoencoder_tensors(const fs::path& ckpt) {
  std::map<std::string, std::vector<float>> out;
  for (auto& t : io::read_checkpoint(ckpt).tensors)
    if (t.name.rfind("enc.", 0) == 0 || t.name.rfind("dec.", 0) == 0) out[t.name] = t.values;
  return out;
}

struct Desk {
  Outcome experiment, staging;
};

double mean_of(const std::vector<metrics::MetricRow>& rows,
               double metrics::MetricRow::*field) {
  double s = 0.0;
  for (const auto& r : rows) s += r.*field;
  return rows.empty() ? std::nan("") : s / double(rows.size());
}

Desk desk_experiment(const fs::path& work) {
  Desk result;
  const auto t0 = Clock::now();
  const auto cfg = config::load(std::string(MGPVAE_SOURCE_DIR) + "/configs/desk.ini");
  const fs::path data = work / "data", ckpt = work / "model.ckpt", log = work / "train.log";
  const fs::path after_vae = work / "after_vae.ckpt", after_gp = work / "after_gp.ckpt";

  auto fail = [&](const std::string& what, const Run& r) {
    result.experiment = {false, what + " exited " + std::to_string(r.code) + ": " + r.err};
    result.staging = result.experiment;
    return result;
  };
  if (auto r = run([&](cli::Streams s) { return cli::gen_data({cfg, data.string()}, s); }); r.code)
    return fail("gen-data", r);

  // Train in three segments split at the stage boundaries; resuming is exact,
  // so this is the same run as an uninterrupted one.
  cli::TrainArgs args;
  args.config = cfg;
  args.data_dir = data.string();
  args.out_checkpoint = ckpt.string();
  args.log_path = log.string();
  args.max_epochs = cfg.plan.vae.epochs;
  if (auto r = run([&](cli::Streams s) { return cli::train(args, s); }); r.code)
    return fail("train stage 1", r);
  fs::copy_file(ckpt, after_vae);
  args.config.reset();
  args.resume = ckpt.string();
  args.max_epochs = cfg.plan.gp.epochs;
  if (auto r = run([&](cli::Streams s) { return cli::train(args, s); }); r.code)
    return fail("train stage 2", r);
  fs::copy_file(ckpt, after_gp);
  args.max_epochs = 0;
  if (auto r = run([&](cli::Streams s) { return cli::train(args, s); }); r.code)
    return fail("train stage 3", r);

  // Drop-1 targets with their three present modalities.
  const auto dataset = io::read_dataset(data);
  const auto targets = dataset.grid.mask.absent_cells();
  cli::ImputeArgs imp{ckpt.string(), data.string(), std::nullopt, {}, (work / "imp3").string()};
  if (auto r = run([&](cli::Streams s) { return cli::impute(imp, s); }); r.code)
    return fail("impute", r);
  const auto rows3 = metrics::parse_rows(io::read_text(work / "imp3/metrics.tsv"));

  // Each target again with one of its patient's present modalities hidden,
  // one run per choice so other patients keep their full conditioning set.
  std::vector<metrics::MetricRow> rows2;
  for (const auto& t : targets)
    for (std::size_t m = 0; m < cfg.data.modalities; ++m) {
      if (!dataset.grid.mask.present(t.patient, m)) continue;
      const fs::path out = work / ("imp2_" + std::to_string(rows2.size()));
      cli::ImputeArgs h{ckpt.string(), data.string(), std::vector<gp::Cell>{t},
                        {{t.patient, m}}, out.string()};
      if (auto r = run([&](cli::Streams s) { return cli::impute(h, s); }); r.code)
        return fail("impute --hide", r);
      for (auto& row : metrics::parse_rows(io::read_text(out / "metrics.tsv"))) rows2.push_back(row);
    }
  const double secs = seconds_since(t0);

  using R = metrics::MetricRow;
  const double mgp = mean_of(rows3, &R::psnr_mgp), mean = mean_of(rows3, &R::psnr_mean),
               interp = mean_of(rows3, &R::psnr_interp), mgp2 = mean_of(rows2, &R::psnr_mgp);
  const bool counts = rows3.size() == cfg.data.patients && rows2.size() == 3 * rows3.size();
  result.experiment = {counts && mgp >= mean + 3.0 && mgp > interp && mgp >= mgp2 && secs < 1800.0,
                       "PSNR mgp " + fmt(mgp, 4) + " / mean " + fmt(mean, 4) + " / interp " +
                           fmt(interp, 4) + "; 3 present " + fmt(mgp, 4) + " vs 2 present " +
                           fmt(mgp2, 4) + "; " + fmt(secs, 4) + "s"};

  // Staging contract on the same run.
  const auto records = read_log(log);
  std::vector<double> stage2;
  for (const auto& r : records)
    if (r.stage == 2) stage2.push_back(r.gp);
  const bool frozen = autoencoder_tensors(after_vae) == autoencoder_tensors(after_gp);
  const bool decreased = stage2.size() == cfg.plan.gp.epochs && stage2.back() < stage2.front();

  // Seed reproducibility: a short full-plan run twice on the same data.
  auto short_cfg = cfg;
  short_cfg.plan = {{3, 1e-3}, {3, 1e-2}, {3, 1e-3}};
  bool identical = true;
  std::string first;
  for (const char* name : {"seed_a.ckpt", "seed_b.ckpt"}) {
    cli::TrainArgs a;
    a.config = short_cfg;
    a.data_dir = data.string();
    a.out_checkpoint = (work / name).string();
    if (run([&](cli::Streams s) { return cli::train(a, s); }).code) identical = false;
  }
  identical = identical && io::read_file(work / "seed_a.ckpt") == io::read_file(work / "seed_b.ckpt");
  result.staging = {frozen && decreased && identical,
                    std::string("autoencoder ") + (frozen ? "unchanged" : "CHANGED") +
                        " across stage 2; gp term " + fmt(stage2.empty() ? 0 : stage2.front(), 5) +
                        " -> " + fmt(stage2.empty() ? 0 : stage2.back(), 5) + "; same-seed checkpoints " +
                        (identical ? "identical" : "DIFFER")};
  return result;
}

Outcome sampling() {
  const Matrix kx = testutil::random_pd(2, 7, 0.3), kw = testutil::random_pd(2, 8, 0.3);
  const Matrix z = gp::sample_prior(kx, kw, 1e-4, 100000, 9);
  const Matrix k = gp::kron(kx, kw) + 1e-4 * Matrix::Identity(4, 4);
  const Matrix emp = z * z.transpose() / double(z.cols());
  const double cov_err = (emp - k).norm() / k.norm();

  const std::vector<float> mu{1.5f, -2.0f, 3.0f}, sigma{0.5f, 1.2f, 2.0f};
  const std::size_t draws = 100000;
  std::vector<float> mus, sigmas;
  for (std::size_t i = 0; i < draws; ++i) {
    mus.insert(mus.end(), mu.begin(), mu.end());
    sigmas.insert(sigmas.end(), sigma.begin(), sigma.end());
  }
  auto zs = net::reparameterize(ad::Tensor({draws, 3}, mus), ad::Tensor({draws, 3}, sigmas),
                                ad::Tensor({draws, 3}, testutil::random_floats(3 * draws, 10)));
  double moment_err = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < draws; ++i) {
      const double v = zs.data()[i * 3 + j];
      s += v;
      s2 += v * v;
    }
    const double m = s / draws, sd = std::sqrt(s2 / draws - m * m);
    moment_err = std::max({moment_err, std::abs(m - mu[j]) / std::abs(mu[j]),
                           std::abs(sd - sigma[j]) / sigma[j]});
  }
  return {cov_err < 0.05 && moment_err < 0.02,
          "prior cov rel " + fmt(cov_err) + ", reparameterize moments rel " + fmt(moment_err)};
}

Outcome round_trips(const fs::path& work) {
  std::mt19937_64 rng(11);
  std::size_t checked = 0;
  bool ok = true;
  for (int i = 0; i < 20; ++i) {
    const std::size_t side = 1 + rng() % 9;
    Volume v(side, testutil::random_floats(side * side * side, rng()));
    io::write_volume(work / "a.mgpv", v);
    io::write_volume(work / "b.mgpv", io::read_volume(work / "a.mgpv"));
    ok = ok && io::read_file(work / "a.mgpv") == io::read_file(work / "b.mgpv");

    io::Checkpoint c;
    c.seed = rng();
    c.cursor = {1 + rng() % 4, rng() % 100};
    c.adam_step = rng() % 100000;
    c.config_text = "[run]\nseed = " + std::to_string(c.seed) + "\n";
    for (std::size_t t = 0, n = 1 + rng() % 6; t < n; ++t) {
      io::NamedArray a;
      a.name = "tensor" + std::to_string(t);
      std::size_t count = 1;
      for (std::size_t r = 0, rank = 1 + rng() % 4; r < rank; ++r) {
        a.shape.push_back(1 + rng() % 5);
        count *= a.shape.back();
      }
      a.values = testutil::random_floats(count, rng());
      c.tensors.push_back(std::move(a));
    }
    io::write_checkpoint(work / "a.ckpt", c);
    io::write_checkpoint(work / "b.ckpt", io::read_checkpoint(work / "a.ckpt"));
    ok = ok && io::read_file(work / "a.ckpt") == io::read_file(work / "b.ckpt");
    checked += 2;
  }
  return {ok, std::to_string(checked) + " files written, read and rewritten"};
}

}  // namespace

int main() {
  testutil::TempDir work("acceptance");
  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria;
  Desk desk;
  bool desk_done = false;
  auto desk_run = [&]() -> const Desk& {
    if (!desk_done) desk = desk_experiment(work / "desk"), desk_done = true;
    return desk;
  };
  criteria.emplace_back("gradient check on the tiny model", gradients);
  criteria.emplace_back("Kronecker log-density vs dense oracle", kronecker_oracle);
  criteria.emplace_back("GP regression vs dense oracle", regression_oracle);
  criteria.emplace_back("identity-kernel loss vs standard VAE", vae_degeneration);
  criteria.emplace_back("desk end-to-end imputation", [&] { return desk_run().experiment; });
  criteria.emplace_back("staged training contract", [&] { return desk_run().staging; });
  criteria.emplace_back("sampling moments", sampling);
  criteria.emplace_back("format round-trips", [&] { return round_trips(work.path()); });

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << "  "
              << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed")
            << std::endl;
  return failures ? 1 : 0;
}
