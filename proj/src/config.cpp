#include "mgpvae/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mgpvae/errors.hpp"

namespace mgpvae::config {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"run", {"seed"}},
      {"net", {"side", "levels", "features", "endpoint_features", "latent_dim"}},
      {"gp", {"q", "jitter", "x_init_scale", "modality_init_scale"}},
      {"train",
       {"vae_epochs", "vae_lr", "gp_epochs", "gp_lr", "joint_epochs", "joint_lr", "sigma_y_init",
        "checkpoint_every"}},
      {"data",
       {"patients", "modalities", "side", "blobs", "tumor", "gains", "biases", "gammas", "noise_sd",
        "drop"}},
  };
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

class Fields {
 public:
  Fields(const pt::ptree& tree, std::string origin) : tree_(tree), origin_(std::move(origin)) {}

  const std::string* raw(const std::string& path) const {
    auto it = values_.find(path);
    if (it != values_.end()) return &it->second;
    auto node = tree_.get_optional<std::string>(pt::ptree::path_type(path, '.'));
    if (!node) return nullptr;
    values_[path] = trim(*node);
    return &values_[path];
  }

  [[noreturn]] void bad(const std::string& path, const std::string& expected) const {
    throw ValidationError(origin_ + ": " + path + ": expected " + expected + ", got '" +
                          *raw(path) + "'");
  }

  template <class T>
  void integer(const std::string& path, T& out) const {
    const std::string* v = raw(path);
    if (!v) return;
    unsigned long long x = 0;
    auto [end, ec] = std::from_chars(v->data(), v->data() + v->size(), x);
    if (ec != std::errc() || end != v->data() + v->size() || v->empty())
      bad(path, "a non-negative integer");
    out = static_cast<T>(x);
  }

  void real(const std::string& path, double& out) const {
    const std::string* v = raw(path);
    if (!v) return;
    double x = 0.0;
    auto [end, ec] = std::from_chars(v->data(), v->data() + v->size(), x);
    if (ec != std::errc() || end != v->data() + v->size() || v->empty() || !std::isfinite(x))
      bad(path, "a finite number");
    out = x;
  }

  void boolean(const std::string& path, bool& out) const {
    const std::string* v = raw(path);
    if (!v) return;
    if (*v == "true" || *v == "1") out = true;
    else if (*v == "false" || *v == "0") out = false;
    else bad(path, "true or false");
  }

  void reals(const std::string& path, std::vector<double>& out) const {
    const std::string* v = raw(path);
    if (!v) return;
    std::vector<double> xs;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      double x = 0.0;
      auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
      if (item.empty() || ec != std::errc() || end != item.data() + item.size() || !std::isfinite(x))
        bad(path, "a comma-separated list of numbers");
      xs.push_back(x);
    }
    if (xs.empty()) bad(path, "a comma-separated list of numbers");
    out = std::move(xs);
  }

 private:
  const pt::ptree& tree_;
  std::string origin_;
  mutable std::map<std::string, std::string> values_;
};

std::string num(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

std::string nums(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + num(xs[i]);
  return out;
}

}  // namespace

void Config::validate() const {
  net.validate();
  plan.validate();
  data.validate();
  if (net.input_side != data.side)
    throw ValidationError("net.side (" + std::to_string(net.input_side) + ") must equal data.side (" +
                          std::to_string(data.side) + ")");
  if (gp.feature_dim == 0) throw ValidationError("gp.q must be positive");
  if (!(gp.jitter > 0.0)) throw ValidationError("gp.jitter must be positive");
  if (!(gp.feature_scale > 0.0)) throw ValidationError("gp.x_init_scale must be positive");
  if (!(gp.modality_scale > 0.0)) throw ValidationError("gp.modality_init_scale must be positive");
  if (!(sigma_y_init > 0.0)) throw ValidationError("train.sigma_y_init must be positive");
  if (drop >= data.modalities)
    throw ValidationError("data.drop (" + std::to_string(drop) +
                          ") must leave at least one modality per patient (data.modalities = " +
                          std::to_string(data.modalities) + ")");
  if (data.seed != seed) throw ValidationError("data seed must mirror run.seed");
}

Config parse(const std::string& text, const std::string& origin) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(origin + ": line " + std::to_string(e.line()) + ": " + e.message());
  }

  std::vector<std::string> unknown;
  for (const auto& [section, body] : tree) {
    auto it = schema().find(section);
    if (it == schema().end()) {
      unknown.push_back(body.empty() ? section + " (key outside any section)" : "[" + section + "]");
      continue;
    }
    for (const auto& [key, _] : body)
      if (!it->second.count(key)) unknown.push_back(section + "." + key);
  }
  if (!unknown.empty()) {
    std::string msg = origin + ": unknown config keys:";
    for (const auto& u : unknown) msg += " " + u;
    throw ValidationError(msg);
  }

  Config c;
  Fields f(tree, origin);
  f.integer("run.seed", c.seed);
  f.integer("net.side", c.net.input_side);
  f.integer("net.levels", c.net.levels);
  f.integer("net.features", c.net.features);
  f.integer("net.endpoint_features", c.net.endpoint_features);
  f.integer("net.latent_dim", c.net.latent_dim);
  f.integer("gp.q", c.gp.feature_dim);
  f.real("gp.jitter", c.gp.jitter);
  f.real("gp.x_init_scale", c.gp.feature_scale);
  f.real("gp.modality_init_scale", c.gp.modality_scale);
  f.integer("train.vae_epochs", c.plan.vae.epochs);
  f.real("train.vae_lr", c.plan.vae.lr);
  f.integer("train.gp_epochs", c.plan.gp.epochs);
  f.real("train.gp_lr", c.plan.gp.lr);
  f.integer("train.joint_epochs", c.plan.joint.epochs);
  f.real("train.joint_lr", c.plan.joint.lr);
  f.real("train.sigma_y_init", c.sigma_y_init);
  f.integer("train.checkpoint_every", c.checkpoint_every);
  f.integer("data.patients", c.data.patients);
  f.integer("data.modalities", c.data.modalities);
  f.integer("data.side", c.data.side);
  f.integer("data.blobs", c.data.blobs);
  f.boolean("data.tumor", c.data.tumor);
  f.reals("data.gains", c.data.gains);
  f.reals("data.biases", c.data.biases);
  f.reals("data.gammas", c.data.gammas);
  f.real("data.noise_sd", c.data.noise_sd);
  f.integer("data.drop", c.drop);
  c.data.seed = c.seed;
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(origin + ": " + e.what());
  }
  return c;
}

Config load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string to_text(const Config& c) {
  std::ostringstream os;
  os << "[run]\nseed = " << c.seed << "\n\n";
  os << "[net]\nside = " << c.net.input_side << "\nlevels = " << c.net.levels
     << "\nfeatures = " << c.net.features << "\nendpoint_features = " << c.net.endpoint_features
     << "\nlatent_dim = " << c.net.latent_dim << "\n\n";
  os << "[gp]\nq = " << c.gp.feature_dim << "\njitter = " << num(c.gp.jitter)
     << "\nx_init_scale = " << num(c.gp.feature_scale)
     << "\nmodality_init_scale = " << num(c.gp.modality_scale) << "\n\n";
  os << "[train]\nvae_epochs = " << c.plan.vae.epochs << "\nvae_lr = " << num(c.plan.vae.lr)
     << "\ngp_epochs = " << c.plan.gp.epochs << "\ngp_lr = " << num(c.plan.gp.lr)
     << "\njoint_epochs = " << c.plan.joint.epochs << "\njoint_lr = " << num(c.plan.joint.lr)
     << "\nsigma_y_init = " << num(c.sigma_y_init) << "\ncheckpoint_every = " << c.checkpoint_every
     << "\n\n";
  os << "[data]\npatients = " << c.data.patients << "\nmodalities = " << c.data.modalities
     << "\nside = " << c.data.side << "\nblobs = " << c.data.blobs
     << "\ntumor = " << (c.data.tumor ? "true" : "false") << "\ngains = " << nums(c.data.gains)
     << "\nbiases = " << nums(c.data.biases) << "\ngammas = " << nums(c.data.gammas)
     << "\nnoise_sd = " << num(c.data.noise_sd) << "\ndrop = " << c.drop << "\n";
  return os.str();
}

}  // namespace mgpvae::config
