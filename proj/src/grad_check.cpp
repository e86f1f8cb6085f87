#include "mgpvae/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "mgpvae/errors.hpp"

namespace mgpvae::ad {

double GradCheckEntry::rel_error() const {
  const double denom = std::sqrt(sq_analytic) + std::sqrt(sq_numeric);
  return denom > 0.0 ? std::sqrt(sq_error) / denom : 0.0;
}

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [&](const auto& e) { return e.ok(tolerance); });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.rel_error());
  return m;
}

namespace {

std::vector<std::size_t> probe_indices(std::size_t n, std::size_t max_probes, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (n <= max_probes) return idx;
  for (std::size_t i = 0; i < max_probes; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(max_probes);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// NaN signals a failed evaluation so the caller can name the coordinate.
double evaluate(const std::function<Tensor()>& f) {
  try {
    double v = f().item();
    return std::isfinite(v) ? v : std::nan("");
  } catch (const NumericalError&) {
    return std::nan("");
  }
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;

  for (auto& p : params) p.tensor.zero_grad();
  Tensor root = f();
  root.backward();

  std::mt19937_64 rng(options.seed);
  for (auto& p : params) {
    GradCheckEntry entry;
    entry.name = p.name;
    const std::size_t n = p.tensor.size();
    std::vector<float> analytic(n, 0.0f);
    if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());

    auto values = p.tensor.mutable_data();
    for (std::size_t i : probe_indices(n, options.max_probes, rng)) {
      const float original = values[i];
      const float up = static_cast<float>(original + options.step);
      const float down = static_cast<float>(original - options.step);
      values[i] = up;
      const double f_up = evaluate(f);
      values[i] = down;
      const double f_down = evaluate(f);
      values[i] = original;
      if (std::isnan(f_up) || std::isnan(f_down)) {
        std::ostringstream os;
        os << "non-finite objective when probing " << p.name << "[" << i << "]";
        entry.failure = os.str();
        break;
      }
      const double numeric = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
      const double a = analytic[i];
      entry.sq_error += (a - numeric) * (a - numeric);
      entry.sq_analytic += a * a;
      entry.sq_numeric += numeric * numeric;
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      ++entry.probes;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

std::vector<GradCheckEntry> pool(const std::vector<GradCheckEntry>& entries,
                                 const std::function<std::string(const std::string&)>& key) {
  std::vector<GradCheckEntry> out;
  for (const auto& e : entries) {
    const std::string k = key(e.name);
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& g) { return g.name == k; });
    if (it == out.end()) {
      out.push_back({});
      it = std::prev(out.end());
      it->name = k;
    }
    it->probes += e.probes;
    it->max_abs_error = std::max(it->max_abs_error, e.max_abs_error);
    it->sq_error += e.sq_error;
    it->sq_analytic += e.sq_analytic;
    it->sq_numeric += e.sq_numeric;
    if (it->failure.empty()) it->failure = e.failure;
  }
  return out;
}

}  // namespace mgpvae::ad
