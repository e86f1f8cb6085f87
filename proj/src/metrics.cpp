#include "mgpvae/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "mgpvae/errors.hpp"

namespace mgpvae::metrics {

double mse(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw ShapeError("mse: volumes differ in size (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  if (a.empty()) throw ShapeError("mse: empty volumes");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double dynamic_range(std::span<const float> reference) {
  if (reference.empty()) throw ShapeError("psnr: empty reference");
  auto [lo, hi] = std::minmax_element(reference.begin(), reference.end());
  return static_cast<double>(*hi) - static_cast<double>(*lo);
}

double psnr(std::span<const float> reference, std::span<const float> estimate,
            std::optional<double> peak) {
  const double pk = peak ? *peak : dynamic_range(reference);
  if (!(pk > 0.0)) throw ValidationError("psnr: degenerate reference (peak must be positive)");
  const double e = mse(reference, estimate);
  if (e == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(pk * pk / e));
}

std::string row_header() {
  return "#patient\tmodality\tn_present\tpeak\tmse_mgp\tpsnr_mgp\tmse_interp\tpsnr_interp\t"
         "mse_mean\tpsnr_mean";
}

// Shortest text that parses back to the same double.
static std::string exact(double v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::string(buf, end);
}

std::string format_row(const MetricRow& r) {
  std::string s = std::to_string(r.patient) + '\t' + std::to_string(r.modality) + '\t' +
                  std::to_string(r.n_present);
  for (double v : {r.peak, r.mse_mgp, r.psnr_mgp, r.mse_interp, r.psnr_interp, r.mse_mean,
                   r.psnr_mean})
    s += '\t' + exact(v);
  return s;
}

MetricRow parse_row(const std::string& line, std::size_t line_number) {
  std::istringstream is(line);
  MetricRow r;
  long long p = -1, m = -1, n = -1;
  is >> p >> m >> n >> r.peak >> r.mse_mgp >> r.psnr_mgp >> r.mse_interp >> r.psnr_interp >>
      r.mse_mean >> r.psnr_mean;
  std::string extra;
  if (is.fail() || (is >> extra) || p < 0 || m < 0 || n < 0)
    throw ValidationError("malformed metric row at line " + std::to_string(line_number) +
                          ": expected 10 fields (patient modality n_present peak mse_mgp "
                          "psnr_mgp mse_interp psnr_interp mse_mean psnr_mean)");
  r.patient = static_cast<std::size_t>(p);
  r.modality = static_cast<std::size_t>(m);
  r.n_present = static_cast<std::size_t>(n);
  return r;
}

std::vector<MetricRow> parse_rows(const std::string& text) {
  std::vector<MetricRow> rows;
  std::istringstream is(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    rows.push_back(parse_row(line, number));
  }
  return rows;
}

namespace {

struct Stats {
  double mean = 0.0, median = 0.0;
};

Stats stats(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  Stats s;
  double acc = 0.0;
  for (double x : v) acc += x;
  s.mean = acc / static_cast<double>(v.size());
  const std::size_t n = v.size();
  s.median = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return s;
}

GroupSummary summarize(const std::string& label, std::size_t n_present,
                       const std::vector<const MetricRow*>& rows) {
  GroupSummary g;
  g.modality = label;
  g.n_present = n_present;
  g.count = rows.size();
  auto column = [&](double MetricRow::*field) {
    std::vector<double> v;
    for (const auto* r : rows) v.push_back(r->*field);
    return stats(std::move(v));
  };
  auto a = column(&MetricRow::psnr_mgp);
  auto b = column(&MetricRow::psnr_interp);
  auto c = column(&MetricRow::psnr_mean);
  g.mean_psnr_mgp = a.mean, g.median_psnr_mgp = a.median;
  g.mean_psnr_interp = b.mean, g.median_psnr_interp = b.median;
  g.mean_psnr_mean = c.mean, g.median_psnr_mean = c.median;
  g.mean_mse_mgp = column(&MetricRow::mse_mgp).mean;
  g.mean_mse_interp = column(&MetricRow::mse_interp).mean;
  g.mean_mse_mean = column(&MetricRow::mse_mean).mean;
  return g;
}

}  // namespace

Report report(std::vector<MetricRow> rows) {
  Report out;
  if (rows.empty()) return out;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<const MetricRow*>> by_cell;
  std::map<std::size_t, std::vector<const MetricRow*>> by_count;
  for (const auto& r : rows) {
    by_cell[{r.modality, r.n_present}].push_back(&r);
    by_count[r.n_present].push_back(&r);
  }
  for (const auto& [key, group] : by_cell)
    out.groups.push_back(summarize(std::to_string(key.first), key.second, group));
  for (const auto& [n, group] : by_count) out.groups.push_back(summarize("all", n, group));

  const GroupSummary* previous = nullptr;
  for (const auto& g : out.groups) {
    if (g.modality != "all") continue;
    if (previous != nullptr)
      out.monotonicity.push_back(
          {g.n_present, previous->n_present, g.mean_psnr_mgp, previous->mean_psnr_mgp});
    previous = &g;
  }
  return out;
}

std::string format_table(const Report& r) {
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-8s %9s %5s | %10s %10s | %10s %10s | %10s %10s\n", "modality",
                "n_present", "count", "mgp_mean", "mgp_med", "interp_mean", "interp_med",
                "mean_mean", "mean_med");
  os << buf;
  for (const auto& g : r.groups) {
    std::snprintf(buf, sizeof buf, "%-8s %9zu %5zu | %10.3f %10.3f | %11.3f %10.3f | %10.3f %10.3f\n",
                  g.modality.c_str(), g.n_present, g.count, g.mean_psnr_mgp, g.median_psnr_mgp,
                  g.mean_psnr_interp, g.median_psnr_interp, g.mean_psnr_mean, g.median_psnr_mean);
    os << buf;
  }
  for (const auto& m : r.monotonicity) {
    std::snprintf(buf, sizeof buf,
                  "monotonicity: mean PSNR with %zu present %.3f dB %s %zu present %.3f dB\n",
                  m.more_present, m.psnr_more, m.holds() ? ">=" : "<", m.fewer_present,
                  m.psnr_fewer);
    os << buf;
  }
  os << "PSNR in dB; peak = max - min of each reference volume\n";
  return os.str();
}

std::string format_structured(const Report& r) {
  std::ostringstream os;
  os << "#modality\tn_present\tcount\tmean_psnr_mgp\tmedian_psnr_mgp\tmean_psnr_interp\t"
        "median_psnr_interp\tmean_psnr_mean\tmedian_psnr_mean\tmean_mse_mgp\tmean_mse_interp\t"
        "mean_mse_mean\n";
  char buf[512];
  for (const auto& g : r.groups) {
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n",
                  g.modality.c_str(), g.n_present, g.count, g.mean_psnr_mgp, g.median_psnr_mgp,
                  g.mean_psnr_interp, g.median_psnr_interp, g.mean_psnr_mean, g.median_psnr_mean,
                  g.mean_mse_mgp, g.mean_mse_interp, g.mean_mse_mean);
    os << buf;
  }
  return os.str();
}

}  // namespace mgpvae::metrics
