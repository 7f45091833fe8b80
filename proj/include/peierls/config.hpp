#pragma once

// Run configuration: an INI file with sections [model], [numerics], [island],
// [magnetic] and [outputs], validated with section/key locations, plus its
// canonical JSON form and SHA-256 digest.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "peierls/bloch.hpp"
#include "peierls/errors.hpp"
#include "peierls/field.hpp"
#include "peierls/host.hpp"

namespace peierls {

struct Fraction {
  int num = 0;
  int den = 1;

  double value() const { return static_cast<double>(num) / den; }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

struct NumericsConfig {
  int bz_points = 32;          ///< M, a power of two
  int wannier_radius = 12;     ///< R_w
  int hopping_radius = 12;     ///< R_mu
  int window_cells = 16;       ///< L, side of the magnetic torus
  int magnetic_k_points = 4;   ///< k-grid per direction of the magnetic Bloch spectra
  double mass_tolerance = 1e-10;
  double boundary_tolerance = 1e-8;
  std::vector<int> trial_sites;  ///< empty: island eigenvectors at theta = 0
  double t_max = 10.0;
  int t_steps = 20;
  int quadrature_nodes = 16;
  int seed = 12345;
};

struct IslandConfig {
  std::optional<double> lower, upper;

  bool set() const { return lower && upper; }
};

struct MagneticConfig {
  std::string gauge = "landau_uniform";  ///< none | landau_uniform | slowly_varying | pure_gauge
  double b = 1.0;
  double modulation = 0.0;
  std::vector<GaugeTerm> gauge_terms;
  std::vector<Fraction> fluxes{{1, 256}, {1, 128}, {3, 256}, {1, 64}, {5, 256}, {3, 128}, {7, 256}, {1, 32}};
  int q_max = 100;
  bool include_zero = true;
};

struct OutputConfig {
  std::string directory = "out";
  bool cache = true;
  bool clip_to_island = false;
};

struct RunConfig {
  ModelConfig model;
  NumericsConfig numerics;
  IslandConfig island;
  MagneticConfig magnetic;
  OutputConfig outputs;
  std::string source;  ///< path of the parsed file

  Interval interval() const { return {*island.lower, *island.upper}; }
};

namespace detail {

inline std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

inline std::vector<std::string> split(const std::string& s, const std::string& seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (seps.find(c) != std::string::npos) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& text, const std::string& loc) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(loc + ": expected a number, got '" + text + "'");
  }
  if (used != text.size() || !std::isfinite(v)) throw ConfigError(loc + ": expected a finite number, got '" + text + "'");
  return v;
}

inline int parse_int(const std::string& text, const std::string& loc) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(loc + ": expected an integer, got '" + text + "'");
  }
  if (used != text.size() || v < -2147483647L || v > 2147483647L)
    throw ConfigError(loc + ": expected an integer, got '" + text + "'");
  return static_cast<int>(v);
}

inline bool parse_bool(const std::string& text, const std::string& loc) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(loc + ": expected true or false, got '" + text + "'");
}

inline std::vector<double> parse_doubles(const std::string& text, const std::string& loc) {
  std::vector<double> out;
  for (const auto& t : split(text, " \t,")) out.push_back(parse_double(t, loc));
  return out;
}

inline std::vector<int> parse_ints(const std::string& text, const std::string& loc) {
  std::vector<int> out;
  for (const auto& t : split(text, " \t,")) out.push_back(parse_int(t, loc));
  return out;
}

/// "x y, x y, ..."
inline std::vector<Vec2> parse_vectors(const std::string& text, const std::string& loc) {
  std::vector<Vec2> out;
  for (const auto& item : split(text, ",")) {
    const auto v = parse_doubles(item, loc);
    if (v.size() != 2) throw ConfigError(loc + ": vectors are written 'x y' and separated by commas");
    out.emplace_back(v[0], v[1]);
  }
  return out;
}

inline Fraction parse_fraction(const std::string& text, const std::string& loc) {
  const auto slash = text.find('/');
  Fraction f;
  if (slash == std::string::npos) {
    f.num = parse_int(text, loc);
  } else {
    f.num = parse_int(text.substr(0, slash), loc);
    f.den = parse_int(text.substr(slash + 1), loc);
  }
  if (f.den < 1) throw ConfigError(loc + ": flux '" + text + "' needs a denominator >= 1");
  if (f.num < 0) throw ConfigError(loc + ": flux '" + text + "' must be nonnegative");
  if (std::gcd(f.num, f.den) != 1) throw ConfigError(loc + ": flux '" + text + "': fraction not in lowest terms");
  return f;
}

inline bool power_of_two(int m) { return m >= 1 && (m & (m - 1)) == 0; }

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericalError("SHA-256 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace detail

/// Parses and validates an INI configuration. Unknown sections or keys are errors.
inline RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>",
                                   const std::filesystem::path& base_dir = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  using namespace detail;
  const std::map<std::string, std::set<std::string>> known{
      {"model", {"kind", "q", "potential", "hopping", "t1", "t2", "v", "n_max", "file", "basis", "positions"}},
      {"numerics",
       {"bz_points", "wannier_radius", "hopping_radius", "window_cells", "magnetic_k_points", "mass_tolerance",
        "boundary_tolerance", "trial_sites", "t_max", "t_steps", "quadrature_nodes", "seed"}},
      {"island", {"lower", "upper"}},
      {"magnetic", {"gauge", "b", "modulation", "gauge_terms", "fluxes", "q_max", "include_zero"}},
      {"outputs", {"directory", "cache", "clip_to_island"}}};
  for (const auto& [section, body] : tree) {
    const auto it = known.find(section);
    if (it == known.end()) {
      if (body.empty()) throw ConfigError(source + ": key '" + section + "' outside any section");
      throw ConfigError(source + ": unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body)
      if (!it->second.count(key)) throw ConfigError(source + ": unknown key " + where(section, key));
  }

  RunConfig cfg;
  cfg.source = source;
  const auto get = [&](const std::string& section, const std::string& key) -> std::optional<std::string> {
    const auto v = tree.get_optional<std::string>(pt::ptree::path_type(section + "." + key, '.'));
    if (!v) return std::nullopt;
    return trim(*v);
  };
  const auto num = [&](const std::string& s, const std::string& k, double& out) {
    if (auto v = get(s, k)) out = parse_double(*v, where(s, k));
  };
  const auto integer = [&](const std::string& s, const std::string& k, int& out) {
    if (auto v = get(s, k)) out = parse_int(*v, where(s, k));
  };
  const auto boolean = [&](const std::string& s, const std::string& k, bool& out) {
    if (auto v = get(s, k)) out = parse_bool(*v, where(s, k));
  };

  auto& m = cfg.model;
  if (auto v = get("model", "kind")) m.kind = *v;
  if (m.kind != "square2d" && m.kind != "ssh1d" && m.kind != "mathieu1d" && m.kind != "hopping_list")
    throw ConfigError(where("model", "kind") + ": unknown model kind '" + m.kind +
                      "' (square2d, ssh1d, mathieu1d, hopping_list)");
  integer("model", "q", m.q);
  if (auto v = get("model", "potential")) m.potential = parse_doubles(*v, where("model", "potential"));
  num("model", "hopping", m.hopping);
  num("model", "t1", m.t1);
  num("model", "t2", m.t2);
  num("model", "v", m.v);
  integer("model", "n_max", m.n_max);
  if (auto v = get("model", "file")) {
    std::filesystem::path p(*v);
    m.file = p.is_relative() && !base_dir.empty() ? (base_dir / p).string() : p.string();
  }
  if (auto v = get("model", "basis")) m.basis = parse_vectors(*v, where("model", "basis"));
  if (auto v = get("model", "positions")) m.positions = parse_vectors(*v, where("model", "positions"));
  if (m.kind == "square2d") {
    if (m.q < 1) throw ConfigError(where("model", "q") + ": must be >= 1");
    if (!m.potential.empty() && static_cast<int>(m.potential.size()) != m.q * m.q)
      throw ConfigError(where("model", "potential") + ": needs q*q = " + std::to_string(m.q * m.q) + " values");
  }
  if (m.kind == "mathieu1d" && m.n_max < 0) throw ConfigError(where("model", "n_max") + ": must be >= 0");
  if (m.kind == "hopping_list") {
    if (m.file.empty()) throw ConfigError(where("model", "file") + ": required for hopping_list");
    if (m.basis.empty() || m.basis.size() > 2) throw ConfigError(where("model", "basis") + ": one or two vectors");
    if (m.positions.empty()) throw ConfigError(where("model", "positions") + ": at least one site position");
  }

  auto& n = cfg.numerics;
  integer("numerics", "bz_points", n.bz_points);
  integer("numerics", "wannier_radius", n.wannier_radius);
  integer("numerics", "hopping_radius", n.hopping_radius);
  integer("numerics", "window_cells", n.window_cells);
  integer("numerics", "magnetic_k_points", n.magnetic_k_points);
  num("numerics", "mass_tolerance", n.mass_tolerance);
  num("numerics", "boundary_tolerance", n.boundary_tolerance);
  if (auto v = get("numerics", "trial_sites")) n.trial_sites = parse_ints(*v, where("numerics", "trial_sites"));
  num("numerics", "t_max", n.t_max);
  integer("numerics", "t_steps", n.t_steps);
  integer("numerics", "quadrature_nodes", n.quadrature_nodes);
  integer("numerics", "seed", n.seed);
  if (!power_of_two(n.bz_points) || n.bz_points < 2)
    throw ConfigError(where("numerics", "bz_points") + ": bz_points must be a power of two (got " +
                      std::to_string(n.bz_points) + ")");
  if (n.wannier_radius < 1) throw ConfigError(where("numerics", "wannier_radius") + ": must be >= 1");
  if (n.hopping_radius < 1) throw ConfigError(where("numerics", "hopping_radius") + ": must be >= 1");
  if (n.window_cells < 2) throw ConfigError(where("numerics", "window_cells") + ": must be >= 2");
  if (n.magnetic_k_points < 1) throw ConfigError(where("numerics", "magnetic_k_points") + ": must be >= 1");
  if (!(n.mass_tolerance > 0.0)) throw ConfigError(where("numerics", "mass_tolerance") + ": must be positive");
  if (!(n.boundary_tolerance > 0.0)) throw ConfigError(where("numerics", "boundary_tolerance") + ": must be positive");
  if (!(n.t_max > 0.0)) throw ConfigError(where("numerics", "t_max") + ": must be positive");
  if (n.t_steps < 1) throw ConfigError(where("numerics", "t_steps") + ": must be >= 1");
  if (n.quadrature_nodes != 16 && n.quadrature_nodes != 32)
    throw ConfigError(where("numerics", "quadrature_nodes") + ": 16 or 32");

  if (auto v = get("island", "lower")) cfg.island.lower = parse_double(*v, where("island", "lower"));
  if (auto v = get("island", "upper")) cfg.island.upper = parse_double(*v, where("island", "upper"));
  if (cfg.island.lower.has_value() != cfg.island.upper.has_value())
    throw ConfigError("[island]: give both lower and upper");
  if (cfg.island.set() && !(*cfg.island.lower < *cfg.island.upper))
    throw ConfigError("[island]: lower must be below upper");

  auto& g = cfg.magnetic;
  if (auto v = get("magnetic", "gauge")) g.gauge = *v;
  if (g.gauge != "none" && g.gauge != "landau_uniform" && g.gauge != "slowly_varying" && g.gauge != "pure_gauge")
    throw ConfigError(where("magnetic", "gauge") + ": unknown gauge '" + g.gauge +
                      "' (none, landau_uniform, slowly_varying, pure_gauge)");
  num("magnetic", "b", g.b);
  num("magnetic", "modulation", g.modulation);
  if (auto v = get("magnetic", "gauge_terms")) {
    g.gauge_terms.clear();
    for (const auto& item : split(*v, ",")) {
      const auto t = parse_doubles(item, where("magnetic", "gauge_terms"));
      if (t.size() != 4) throw ConfigError(where("magnetic", "gauge_terms") + ": each term is 'k1 k2 amplitude phase'");
      g.gauge_terms.push_back({Vec2(t[0], t[1]), t[2], t[3]});
    }
  }
  if (auto v = get("magnetic", "fluxes")) {
    g.fluxes.clear();
    for (const auto& item : split(*v, " \t,")) g.fluxes.push_back(parse_fraction(item, where("magnetic", "fluxes")));
  }
  integer("magnetic", "q_max", g.q_max);
  boolean("magnetic", "include_zero", g.include_zero);
  if (g.q_max < 1) throw ConfigError(where("magnetic", "q_max") + ": must be >= 1");
  if ((g.gauge == "landau_uniform" || g.gauge == "slowly_varying") && !(g.b > 0.0))
    throw ConfigError(where("magnetic", "b") + ": must be positive for a magnetic gauge");
  if (g.gauge == "pure_gauge" && g.gauge_terms.empty())
    throw ConfigError(where("magnetic", "gauge_terms") + ": required for pure_gauge");

  if (auto v = get("outputs", "directory")) cfg.outputs.directory = *v;
  boolean("outputs", "cache", cfg.outputs.cache);
  boolean("outputs", "clip_to_island", cfg.outputs.clip_to_island);
  return cfg;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path, std::filesystem::path(path).parent_path());
}

/// Canonical JSON of everything that influences numerical results (outputs excluded).
inline nlohmann::json canonical_json(const RunConfig& cfg) {
  using nlohmann::json;
  const auto vecs = [](const std::vector<Vec2>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back({x.x(), x.y()});
    return a;
  };
  json j;
  const auto& m = cfg.model;
  j["model"] = {{"kind", m.kind}, {"q", m.q}, {"potential", m.potential}, {"hopping", m.hopping}, {"t1", m.t1},
                {"t2", m.t2}, {"v", m.v}, {"n_max", m.n_max}, {"basis", vecs(m.basis)}, {"positions", vecs(m.positions)}};
  if (m.kind == "hopping_list") {
    std::ifstream in(m.file);
    std::stringstream ss;
    ss << in.rdbuf();
    j["model"]["file_sha256"] = detail::sha256_hex(ss.str());
  }
  const auto& n = cfg.numerics;
  j["numerics"] = {{"bz_points", n.bz_points},
                   {"wannier_radius", n.wannier_radius},
                   {"hopping_radius", n.hopping_radius},
                   {"window_cells", n.window_cells},
                   {"magnetic_k_points", n.magnetic_k_points},
                   {"mass_tolerance", n.mass_tolerance},
                   {"boundary_tolerance", n.boundary_tolerance},
                   {"trial_sites", n.trial_sites},
                   {"t_max", n.t_max},
                   {"t_steps", n.t_steps},
                   {"quadrature_nodes", n.quadrature_nodes},
                   {"seed", n.seed}};
  j["island"] = cfg.island.set() ? json{{"lower", *cfg.island.lower}, {"upper", *cfg.island.upper}} : json(nullptr);
  const auto& g = cfg.magnetic;
  json terms = json::array();
  for (const auto& t : g.gauge_terms) terms.push_back({t.k.x(), t.k.y(), t.amplitude, t.phase});
  json fluxes = json::array();
  for (const auto& f : g.fluxes) fluxes.push_back({f.num, f.den});
  j["magnetic"] = {{"gauge", g.gauge},   {"b", g.b},         {"modulation", g.modulation},
                   {"gauge_terms", terms}, {"fluxes", fluxes}, {"q_max", g.q_max},
                   {"include_zero", g.include_zero}};
  return j;
}

inline std::string config_hash(const RunConfig& cfg) { return detail::sha256_hex(canonical_json(cfg).dump()); }

/// The field at flux p/Q per unit area: eps b = 2 pi p / Q for the magnetic
/// gauges, eps = 2 pi p / Q as the strength of a pure gauge.
inline FieldSpec field_for(const RunConfig& cfg, const Fraction& flux) {
  FieldSpec f;
  const auto& g = cfg.magnetic;
  f.quadrature_nodes = cfg.numerics.quadrature_nodes;
  f.b = g.b;
  f.modulation = g.modulation;
  if (g.gauge == "none") return f;
  if (g.gauge == "pure_gauge") {
    f.kind = GaugeKind::pure_gauge;
    f.gauge = g.gauge_terms;
    f.epsilon = kTwoPi * flux.value();
    return f;
  }
  f.kind = g.gauge == "landau_uniform" ? GaugeKind::landau_uniform : GaugeKind::slowly_varying;
  f.epsilon = kTwoPi * flux.value() / g.b;
  if (flux.num > 0) f.flux_rational = std::make_pair(flux.num, flux.den);
  return f;
}

}  // namespace peierls
