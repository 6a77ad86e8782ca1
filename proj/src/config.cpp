#include "qmcfem/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qmcfem/errors.hpp"

namespace qmcfem {

namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s = {
      {"problem", {"kind"}},
      {"mesh", {"family", "divisions", "max_dofs"}},
      {"coefficient", {"family", "s", "kappa", "psi0", "modes"}},
      {"bip",
       {"source", "variant", "sigma", "regions", "goal", "gamma", "delta", "synth_seed", "synth_level"}},
      {"ocp", {"alpha1", "alpha2", "theta", "f_lo", "f_hi", "u_hat", "tol", "max_iter"}},
      {"estimator", {"c_star"}},
      {"qmc", {"m0", "max_m", "alpha", "n", "c", "beta_scale", "lattice_file"}},
      {"adaptive", {"tau_fem", "tau_qmc", "threads"}},
      {"reference", {"enabled", "levels", "samples", "seed", "batches"}},
      {"output", {"dir", "timings", "samples"}},
  };
  return s;
}

std::string trim(const std::string& v) {
  const auto b = v.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = v.find_last_not_of(" \t\r\n");
  return v.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::string> words(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream ss(v);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long i = 0;
  try {
    i = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": not an integer: '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key + ": not an integer: '" + v + "'");
  return i;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": not a boolean: '" + v + "'");
}

std::vector<double> numbers(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& w : words(v)) out.push_back(to_double(key, w));
  return out;
}

RegionFunctional region(const std::string& key, const std::string& v) {
  const auto n = numbers(key, v);
  if (n.size() != 5) throw ConfigError(key + ": expected 'x0 y0 x1 y1 scale'");
  RegionFunctional r{{n[0], n[1], n[2], n[3]}, n[4]};
  if (!r.region.valid()) throw ConfigError(key + ": empty region");
  return r;
}

Mode mode(const std::string& v) {
  const auto w = words(v);
  if (w.empty()) throw ConfigError("coefficient.modes: empty mode");
  std::vector<double> n;
  for (std::size_t i = 1; i < w.size(); ++i) n.push_back(to_double("coefficient.modes", w[i]));
  if (w[0] == "sine") {
    if (n.size() != 3) throw ConfigError("coefficient.modes: expected 'sine k1 k2 amplitude'");
    const auto k1 = static_cast<int>(n[0]), k2 = static_cast<int>(n[1]);
    if (k1 != n[0] || k2 != n[1] || k1 < 1 || k2 < 1)
      throw ConfigError("coefficient.modes: sine frequencies must be positive integers");
    return SineMode{k1, k2, n[2]};
  }
  if (w[0] == "box") {
    if (n.size() != 5) throw ConfigError("coefficient.modes: expected 'box x0 y0 x1 y1 value'");
    return BoxMode{{n[0], n[1], n[2], n[3]}, n[4]};
  }
  throw ConfigError("coefficient.modes: unknown mode type '" + w[0] + "'");
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  std::optional<std::string> get(const std::string& section, const std::string& key) const {
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return trim(*v);
  }
  template <class F>
  void with(const std::string& section, const std::string& key, F&& f) const {
    if (auto v = get(section, key)) {
      const std::string name = section + "." + key;
      f(name, *v);
    }
  }

 private:
  const pt::ptree& tree_;
};

}  // namespace

RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    const auto it = schema().find(section);
    if (it == schema().end()) throw ConfigError("unknown config section [" + section + "]");
    if (!body.data().empty()) throw ConfigError("key '" + section + "' outside of a section");
    for (const auto& [key, value] : body)
      if (!it->second.count(key)) throw ConfigError("unknown config key " + section + "." + key);
  }

  RunConfig c;
  const Reader r(tree);
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };

  r.with("problem", "kind", [&](const std::string& k, const std::string& v) {
    if (v == "bip") c.kind = ProblemKind::bip;
    else if (v == "ocp") c.kind = ProblemKind::ocp;
    else throw ConfigError(k + ": expected bip or ocp");
  });

  r.with("mesh", "family", [&](const std::string& k, const std::string& v) {
    if (v == "criss_cross") c.criss_cross = true;
    else if (v == "diagonal") c.criss_cross = false;
    else throw ConfigError(k + ": expected criss_cross or diagonal");
  });
  r.with("mesh", "divisions", [&](const auto& k, const auto& v) { c.initial_divisions = static_cast<int>(to_int(k, v)); });
  r.with("mesh", "max_dofs", [&](const auto& k, const auto& v) { c.max_dofs = static_cast<int>(to_int(k, v)); });

  std::string family = "sine";
  r.with("coefficient", "family", [&](const auto& k, const auto& v) {
    if (v != "sine" && v != "custom") throw ConfigError(k + ": expected sine or custom");
    family = v;
  });
  r.with("coefficient", "s", [&](const auto& k, const auto& v) { c.s = static_cast<int>(to_int(k, v)); });
  r.with("coefficient", "kappa", [&](const auto& k, const auto& v) { c.kappa = to_double(k, v); });
  if (family == "custom") {
    double psi0 = 0.5;
    std::vector<Mode> modes;
    r.with("coefficient", "psi0", [&](const auto& k, const auto& v) { psi0 = to_double(k, v); });
    r.with("coefficient", "modes", [&](const auto&, const auto& v) {
      for (const auto& m : split(v, ';')) modes.push_back(mode(m));
    });
    if (modes.empty()) throw ConfigError("coefficient.modes: a custom coefficient needs at least one mode");
    try {
      c.coefficient = std::make_shared<const AffineCoefficient>(psi0, std::vector<Mode>{}, std::move(modes), c.kappa);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("coefficient: ") + e.what());
    }
    c.s = c.coefficient->dimension();
  } else if (r.get("coefficient", "psi0") || r.get("coefficient", "modes")) {
    throw ConfigError("coefficient.psi0 and coefficient.modes require family = custom");
  }

  r.with("bip", "source", [&](const auto& k, const auto& v) { c.source = to_double(k, v); });
  r.with("bip", "variant", [&](const auto& k, const auto& v) {
    if (v == "l2") c.variant = EstimatorVariant::l2;
    else if (v == "h1") c.variant = EstimatorVariant::h1;
    else throw ConfigError(k + ": expected l2 or h1");
  });
  r.with("bip", "sigma", [&](const auto& k, const auto& v) { c.sigma = to_double(k, v); });
  r.with("bip", "regions", [&](const auto& k, const auto& v) {
    for (const auto& item : split(v, ';')) c.regions.push_back(region(k, item));
  });
  r.with("bip", "goal", [&](const auto& k, const auto& v) { c.goal = region(k, v); });
  r.with("bip", "gamma", [&](const auto& k, const auto& v) {
    auto w = words(v);
    if (w.size() < 2 || (w[0] != "diag" && w[0] != "full"))
      throw ConfigError(k + ": expected 'diag v1 ...' or 'full g11 g12 ...'");
    std::vector<double> n;
    for (std::size_t i = 1; i < w.size(); ++i) n.push_back(to_double(k, w[i]));
    if (w[0] == "diag") {
      c.gamma = Eigen::VectorXd::Map(n.data(), static_cast<Eigen::Index>(n.size())).asDiagonal();
    } else {
      const auto K = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(n.size()))));
      if (static_cast<std::size_t>(K * K) != n.size()) throw ConfigError(k + ": full matrix needs K^2 entries");
      c.gamma = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(n.data(), K, K);
    }
  });
  r.with("bip", "delta", [&](const auto& k, const auto& v) {
    if (v == "synthesize") {
      c.synthesize = true;
    } else {
      const auto n = numbers(k, v);
      c.delta = Eigen::VectorXd::Map(n.data(), static_cast<Eigen::Index>(n.size()));
    }
  });
  r.with("bip", "synth_seed", [&](const auto& k, const auto& v) { c.synth_seed = static_cast<std::uint64_t>(to_int(k, v)); });
  r.with("bip", "synth_level", [&](const auto& k, const auto& v) { c.synth_level = static_cast<int>(to_int(k, v)); });

  r.with("ocp", "alpha1", [&](const auto& k, const auto& v) { c.control.alpha1 = to_double(k, v); });
  r.with("ocp", "alpha2", [&](const auto& k, const auto& v) { c.control.alpha2 = to_double(k, v); });
  r.with("ocp", "theta", [&](const auto& k, const auto& v) { c.control.theta = to_double(k, v); });
  r.with("ocp", "f_lo", [&](const auto& k, const auto& v) { c.control.f_lo = to_double(k, v); });
  r.with("ocp", "f_hi", [&](const auto& k, const auto& v) { c.control.f_hi = to_double(k, v); });
  r.with("ocp", "u_hat", [&](const auto& k, const auto& v) {
    if (v != "fixture") c.control.u_hat = Source::constant(to_double(k, v));
  });
  r.with("ocp", "tol", [&](const auto& k, const auto& v) { c.control_tol = to_double(k, v); });
  r.with("ocp", "max_iter", [&](const auto& k, const auto& v) { c.control_max_iter = static_cast<int>(to_int(k, v)); });

  r.with("estimator", "c_star", [&](const auto& k, const auto& v) { c.c_star = to_double(k, v); });
  c.control.c_star = c.c_star;

  r.with("qmc", "m0", [&](const auto& k, const auto& v) { c.m0 = static_cast<int>(to_int(k, v)); });
  r.with("qmc", "max_m", [&](const auto& k, const auto& v) { c.max_m = static_cast<int>(to_int(k, v)); });
  r.with("qmc", "alpha", [&](const auto& k, const auto& v) { c.spod_alpha = static_cast<int>(to_int(k, v)); });
  r.with("qmc", "n", [&](const auto& k, const auto& v) { c.spod_n = static_cast<int>(to_int(k, v)); });
  r.with("qmc", "c", [&](const auto& k, const auto& v) { c.spod_c = to_double(k, v); });
  r.with("qmc", "beta_scale", [&](const auto& k, const auto& v) { c.beta_scale = to_double(k, v); });
  r.with("qmc", "lattice_file", [&](const auto&, const auto& v) { c.lattice_file = resolve(v); });

  r.with("adaptive", "tau_fem", [&](const auto& k, const auto& v) { c.tau_fem = to_double(k, v); });
  r.with("adaptive", "tau_qmc", [&](const auto& k, const auto& v) { c.tau_qmc = to_double(k, v); });
  r.with("adaptive", "threads", [&](const auto& k, const auto& v) { c.threads = static_cast<int>(to_int(k, v)); });

  r.with("reference", "enabled", [&](const auto& k, const auto& v) { c.reference_enabled = to_bool(k, v); });
  r.with("reference", "levels", [&](const auto& k, const auto& v) {
    c.reference.mesh_levels.clear();
    for (const auto& w : words(v)) c.reference.mesh_levels.push_back(static_cast<int>(to_int(k, w)));
  });
  r.with("reference", "samples", [&](const auto& k, const auto& v) {
    c.reference.samples.clear();
    for (const auto& w : words(v)) {
      const long long n = to_int(k, w);
      if (n < 0) throw ConfigError(k + ": sample counts must be nonnegative");
      c.reference.samples.push_back(static_cast<std::size_t>(n));
    }
  });
  r.with("reference", "seed", [&](const auto& k, const auto& v) { c.reference.seed = static_cast<std::uint64_t>(to_int(k, v)); });
  r.with("reference", "batches", [&](const auto& k, const auto& v) { c.reference.batches = static_cast<int>(to_int(k, v)); });

  r.with("output", "dir", [&](const auto&, const auto& v) { c.output_dir = v; });
  r.with("output", "timings", [&](const auto& k, const auto& v) { c.timings = to_bool(k, v); });
  r.with("output", "samples", [&](const auto& k, const auto& v) { c.sample_dump = to_bool(k, v); });

  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse_config(in, path.parent_path());
}

}  // namespace qmcfem
