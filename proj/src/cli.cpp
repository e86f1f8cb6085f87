#include "mgpvae/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "mgpvae/errors.hpp"
#include "mgpvae/imputation.hpp"
#include "mgpvae/io.hpp"
#include "mgpvae/metrics.hpp"
#include "mgpvae/synthdata.hpp"
#include "mgpvae/training.hpp"

namespace mgpvae::cli {

namespace fs = std::filesystem;

namespace {

std::string cell_name(gp::Cell c) {
  return std::to_string(c.patient) + ":" + std::to_string(c.modality);
}

void require_matching(const config::Config& cfg, const ViewGrid& grid, const std::string& dir) {
  if (cfg.data.patients != grid.patients || cfg.data.modalities != grid.modalities ||
      cfg.data.side != grid.side)
    throw ValidationError("dataset " + dir + " is " + std::to_string(grid.patients) + "x" +
                          std::to_string(grid.modalities) + " with side " +
                          std::to_string(grid.side) + ", config expects " +
                          std::to_string(cfg.data.patients) + "x" +
                          std::to_string(cfg.data.modalities) + " with side " +
                          std::to_string(cfg.data.side));
}

train::Model fresh_model(const config::Config& cfg) {
  return train::init_model(cfg.net, cfg.gp, cfg.data.patients, cfg.data.modalities,
                           cfg.sigma_y_init, cfg.seed);
}

}  // namespace

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const IoError& e) {
    err << "i/o failure: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o failure: " << e.what() << '\n';
    return kIo;
  }
}

config::Config resolve_config(const std::optional<std::string>& path,
                              std::optional<std::uint64_t> seed) {
  config::Config c = path ? config::load(*path) : config::Config{};
  if (seed) {
    c.seed = *seed;
    c.data.seed = *seed;
  }
  c.validate();
  return c;
}

std::vector<gp::Cell> parse_cells(const std::string& list) {
  std::vector<gp::Cell> cells;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    std::size_t p = 0, m = 0, used_p = 0, used_m = 0;
    bool ok = colon != std::string::npos;
    if (ok) {
      try {
        const std::string ps = item.substr(0, colon), ms = item.substr(colon + 1);
        ok = !ps.empty() && !ms.empty() && ps[0] != '-' && ms[0] != '-';
        if (ok) {
          p = std::stoul(ps, &used_p);
          m = std::stoul(ms, &used_m);
          ok = used_p == ps.size() && used_m == ms.size();
        }
      } catch (const std::logic_error&) {
        ok = false;
      }
    }
    if (!ok) throw ValidationError("bad cell '" + item + "', expected patient:modality");
    cells.push_back({p, m});
  }
  return cells;
}

int gen_data(const GenDataArgs& args, Streams io) {
  const auto& cfg = args.config;
  cfg.validate();
  auto generated = synth::generate(cfg.data);
  ViewGrid grid = std::move(generated.grid);
  grid.mask = synth::mask_dataset(grid, synth::DropPerPatient{cfg.drop}, cfg.seed);
  const fs::path dir(args.out_dir);
  auto entries = io::write_dataset(dir, grid);
  io::write_text(dir / "config.ini", config::to_text(cfg));
  const auto absent = std::count_if(entries.begin(), entries.end(), [](auto& e) { return !e.present; });
  io.out << "wrote " << entries.size() << " cells (" << absent << " absent) to " << dir.string()
         << '\n';
  return kOk;
}

int train(const TrainArgs& args, Streams io) {
  std::optional<io::Checkpoint> resume;
  config::Config cfg;
  if (args.resume) {
    resume = io::read_checkpoint(*args.resume);
    cfg = config::parse(resume->config_text, *args.resume);
    if (args.config && config::to_text(*args.config) != resume->config_text)
      throw ValidationError("--config differs from the configuration stored in " + *args.resume);
  } else {
    if (!args.config) throw ValidationError("train needs --config or --resume");
    cfg = *args.config;
  }
  cfg.validate();
  const std::string config_text = config::to_text(cfg);

  auto dataset = io::read_dataset(args.data_dir);
  require_matching(cfg, dataset.grid, args.data_dir);
  train::Model model = fresh_model(cfg);
  std::optional<train::AdamState> adam;
  if (resume) {
    if (resume->seed != cfg.seed) throw ValidationError("checkpoint seed differs from its config");
    adam = io::load_into(*resume, model);
  }
  train::Trainer trainer(std::move(model), train::make_training_data(dataset.grid), cfg.plan,
                         cfg.seed);
  if (resume) trainer.restore(std::move(*adam), resume->cursor);

  std::ofstream log_file;
  std::ostream* log = &io.out;
  if (args.log_path) {
    const bool append = resume.has_value() && fs::exists(*args.log_path);
    log_file.open(*args.log_path, append ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot open log " + *args.log_path);
    log = &log_file;
    if (!append) *log << train::record_header() << '\n';
  } else {
    *log << train::record_header() << '\n';
  }

  const fs::path out(args.out_checkpoint);
  auto save = [&] { io::write_checkpoint(out, io::snapshot(trainer, config_text)); };
  std::size_t since_save = 0;
  try {
    trainer.run(args.max_epochs, [&](const train::EpochRecord& rec) {
      *log << train::format_record(rec) << '\n';
      log->flush();
      if (cfg.checkpoint_every > 0 && ++since_save >= cfg.checkpoint_every) {
        save();
        since_save = 0;
      }
    });
  } catch (const train::DivergenceError& e) {
    save();
    io.err << e.what() << "\nlast good checkpoint: " << out.string() << '\n';
    return kNumerical;
  }
  save();
  const auto& c = trainer.cursor();
  if (trainer.done())
    io.out << "training complete; checkpoint " << out.string() << '\n';
  else
    io.out << "stopped at stage " << c.stage << " epoch " << c.epoch << "; checkpoint "
           << out.string() << '\n';
  return kOk;
}

int impute(const ImputeArgs& args, Streams io) {
  const auto ckpt = io::read_checkpoint(args.checkpoint);
  const auto cfg = config::parse(ckpt.config_text, args.checkpoint);
  train::Model model = fresh_model(cfg);
  io::load_into(ckpt, model);

  auto dataset = io::read_dataset(args.data_dir);
  require_matching(cfg, dataset.grid, args.data_dir);
  ViewGrid& grid = dataset.grid;
  // The mean floor averages every training volume; hiding only narrows what
  // the per-patient methods condition on.
  const gp::PresenceMask training_mask = grid.mask;
  for (const auto& c : args.hide) {
    if (c.patient >= grid.patients || c.modality >= grid.modalities || !grid.mask.present(c))
      throw ValidationError("--hide cell " + cell_name(c) + " is not a present cell");
    grid.mask.set(c, false);
  }

  impute::ImputationRequest request{&model, &grid, {}};
  request.targets = args.targets ? *args.targets : grid.mask.absent_cells();
  request.validate();
  if (request.targets.empty()) {
    io.out << "no targets\n";
    return kOk;
  }

  const auto mgp = impute::impute(request);
  const auto interp = impute::interp_baseline(request);
  // Leave-one-out: a hidden target never contributes its own truth.
  std::vector<impute::Imputed> mean;
  const gp::PresenceMask conditioning_mask = grid.mask;
  for (const auto& c : request.targets) {
    grid.mask = training_mask;
    grid.mask.set(c, false);
    mean.push_back(impute::mean_baseline({&model, &grid, {c}}).front());
  }
  grid.mask = conditioning_mask;

  const fs::path out(args.out_dir);
  std::ostringstream rows;
  rows << metrics::row_header() << '\n';
  std::size_t scored = 0;
  for (std::size_t t = 0; t < mgp.size(); ++t) {
    const gp::Cell c = mgp[t].target;
    io::write_volume(out / ("p" + std::to_string(c.patient) + "_m" + std::to_string(c.modality) +
                            ".mgpv"),
                     mgp[t].volume);
    if (!dataset.truth(c)) continue;
    const auto& truth = grid.at(c).voxels;
    metrics::MetricRow r;
    r.patient = c.patient;
    r.modality = c.modality;
    r.n_present = grid.mask.present_in_patient(c.patient);
    r.peak = metrics::dynamic_range(truth);
    r.mse_mgp = metrics::mse(truth, mgp[t].volume.voxels);
    r.psnr_mgp = metrics::psnr(truth, mgp[t].volume.voxels, r.peak);
    r.mse_interp = metrics::mse(truth, interp[t].volume.voxels);
    r.psnr_interp = metrics::psnr(truth, interp[t].volume.voxels, r.peak);
    r.mse_mean = metrics::mse(truth, mean[t].volume.voxels);
    r.psnr_mean = metrics::psnr(truth, mean[t].volume.voxels, r.peak);
    rows << metrics::format_row(r) << '\n';
    ++scored;
  }
  if (scored > 0) io::write_text(out / "metrics.tsv", rows.str());
  io.out << "imputed " << mgp.size() << " cells, scored " << scored << " against held-out volumes\n";
  return kOk;
}

int eval(const EvalArgs& args, Streams io) {
  std::vector<metrics::MetricRow> rows;
  for (const auto& file : args.metric_files) {
    const std::string text = io::read_text(file);
    try {
      auto part = metrics::parse_rows(text);
      rows.insert(rows.end(), part.begin(), part.end());
    } catch (const ValidationError& e) {
      throw ValidationError(file + ": " + e.what());
    }
  }
  const auto rep = metrics::report(std::move(rows));
  io.out << metrics::format_table(rep);
  if (args.structured_out) io::write_text(*args.structured_out, metrics::format_structured(rep));
  return kOk;
}

std::vector<GroupCheck> tiny_gradcheck(std::uint64_t seed, double tolerance) {
  synth::PhantomSpec spec;
  spec.patients = 2;
  spec.modalities = 2;
  spec.side = 8;
  spec.blobs = 2;
  spec.gains = {1.0, -1.0};
  spec.biases = {0.0, 0.5};
  spec.gammas = {1.0, 2.0};
  spec.seed = seed;
  auto data = train::make_training_data(synth::generate(spec).grid);

  net::NetConfig net{8, 2, 4, 2, 4};
  train::GpInit gpi{4, 1e-4, 1.0, 1.0};
  // sigma_y = 1 is a stationary point of the noise scale on z-scored data
  // with a near-zero decoder; sigma_y = 2 also damps float32 rounding noise
  // from the decoder relative to the encoder's small gradients.
  train::Model model = train::init_model(net, gpi, 2, 2, 2.0, seed);
  const ad::Tensor upsilon = train::epoch_noise(seed, 3, 0, data.count(), net.latent_dim);
  auto f = [&] { return train::loss(model, data, upsilon, train::Prior::Gp).total; };

  ad::GradCheckOptions opts;
  opts.tolerance = tolerance;
  opts.seed = seed;
  const auto report = ad::grad_check(f, model.named_parameters(), opts);
  const auto pooled = ad::pool(report.entries, [](const std::string& name) {
    return std::string(train::group_name(train::group_of(name)));
  });

  std::vector<GroupCheck> out;
  for (const auto& g : pooled)
    out.push_back({g.name, g.probes, g.rel_error(), g.ok(tolerance), g.failure});
  return out;
}

int gradcheck(const GradCheckArgs& args, Streams io) {
  if (!(args.tolerance > 0.0)) throw ValidationError("--tolerance must be positive");
  const auto groups = tiny_gradcheck(args.seed, args.tolerance);
  bool ok = true;
  char buf[256];
  for (const auto& g : groups) {
    std::snprintf(buf, sizeof buf, "%-18s probes %4zu  rel_error %.3e  %s", g.group.c_str(),
                  g.probes, g.rel_error, g.ok ? "ok" : "FAIL");
    io.out << buf;
    if (!g.failure.empty()) io.out << "  (" << g.failure << ')';
    io.out << '\n';
    ok = ok && g.ok;
  }
  std::snprintf(buf, sizeof buf, "tolerance %.3e: %s\n", args.tolerance, ok ? "pass" : "fail");
  io.out << buf;
  return ok ? kOk : kValidation;
}

}  // namespace mgpvae::cli
