#pragma once

// Command orchestration: cached band artifacts, epsilon sweeps on a worker
// pool, deterministic CSV output and the JSON run report.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "peierls/bloch.hpp"
#include "peierls/config.hpp"
#include "peierls/errors.hpp"
#include "peierls/field.hpp"
#include "peierls/host.hpp"
#include "peierls/magnetic.hpp"
#include "peierls/spectra.hpp"
#include "peierls/wannier.hpp"

namespace peierls {

using nlohmann::json;

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"bands",         "island",           "wannier",
                                              "hoppings",      "magnetic-spectrum", "compare-sweep",
                                              "minimal-coupling", "evolve",         "butterfly"};
  return names;
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw ValidationError("cannot write '" + path.string() + "'");
    line(header);
  }

  template <class... T>
  void row(const T&... cells) {
    std::vector<std::string> v{cell(cells)...};
    line(v);
  }

  void flush() { out_.flush(); }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }

  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  std::ofstream out_;
};

/// Runs fn(0..count-1) on `threads` workers; results come back in index order
/// and the first failing index rethrows.
template <class F>
auto parallel_map(std::size_t count, int threads, F&& fn) {
  using T = decltype(fn(std::size_t{}));
  std::vector<std::optional<T>> results(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        results[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = static_cast<int>(std::max<std::size_t>(1, std::min<std::size_t>(std::max(threads, 1), count)));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  std::vector<T> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*results[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cache serialisation

namespace cache {

inline json matrix(const MatrixXcd& m) {
  json re = json::array(), im = json::array();
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) re.push_back(m(i, j).real()), im.push_back(m(i, j).imag());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"re", re}, {"im", im}};
}

inline MatrixXcd matrix(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto& re = j.at("re");
  const auto& im = j.at("im");
  if (re.size() != static_cast<std::size_t>(rows * cols) || im.size() != re.size())
    throw std::runtime_error("matrix size mismatch");
  MatrixXcd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r, ++k) m(r, c) = cplx(re[k].get<double>(), im[k].get<double>());
  return m;
}

inline json cell_map(const std::map<Cell, MatrixXcd>& m) {
  json a = json::array();
  for (const auto& [c, block] : m) a.push_back({{"cell", {c[0], c[1]}}, {"value", matrix(block)}});
  return a;
}

inline std::map<Cell, MatrixXcd> cell_map(const json& j) {
  std::map<Cell, MatrixXcd> m;
  for (const auto& e : j) m.emplace(Cell{e.at("cell")[0].get<int>(), e.at("cell")[1].get<int>()}, matrix(e.at("value")));
  return m;
}

}  // namespace cache

/// Island, Wannier basis and effective Hamiltonian of one Brillouin grid.
struct BandArtifacts {
  SpectralIsland island;
  WannierBasis wannier;
  EffectiveHamiltonian effective;
  std::optional<int> chern_number;
  int winding = 0;
  double min_trial_gram = 1.0;
  double smoothness_constant = 0.0;
  std::vector<std::string> warnings;
};

inline json artifacts_json(const BandArtifacts& a) {
  json j;
  const auto& w = a.wannier;
  json functions = json::array();
  for (const auto& f : w.functions) {
    std::map<Cell, MatrixXcd> m;
    for (const auto& [c, v] : f.values) m.emplace(c, MatrixXcd(v));
    functions.push_back(cache::cell_map(m));
  }
  json samples = json::array();
  for (const auto& s : w.samples) samples.push_back(cache::matrix(MatrixXcd(s)));
  json positions = json::array();
  for (const auto& p : w.positions) positions.push_back({p.x(), p.y()});
  json moments = json::array();
  for (const auto& m : w.moments) moments.push_back(m);
  j["wannier"] = {{"count", w.count},
                  {"positions", positions},
                  {"functions", functions},
                  {"sample_x", w.sample_x},
                  {"samples", samples},
                  {"window_radius", w.window_radius},
                  {"dropped_mass", w.dropped_mass},
                  {"moments", moments},
                  {"decay_rate", w.decay_rate}};
  json mu = json::array();
  for (const auto& m : a.effective.mu) mu.push_back(cache::matrix(m));
  j["effective"] = {{"mu", mu},
                    {"hoppings", cache::cell_map(a.effective.hoppings)},
                    {"radius", a.effective.radius},
                    {"dropped_mass", a.effective.dropped_mass}};
  j["frame"] = {{"chern_number", a.chern_number ? json(*a.chern_number) : json(nullptr)},
                {"winding", a.winding},
                {"min_trial_gram", a.min_trial_gram},
                {"smoothness_constant", a.smoothness_constant},
                {"warnings", a.warnings}};
  return j;
}

inline BandArtifacts artifacts_from_json(const json& j, const SpectralIsland& island, const HostModel& host,
                                         const BrillouinGrid& grid) {
  BandArtifacts a;
  a.island = island;
  auto& w = a.wannier;
  const auto& jw = j.at("wannier");
  w.lattice = host.lattice();
  w.count = jw.at("count").get<int>();
  for (const auto& p : jw.at("positions")) w.positions.emplace_back(p[0].get<double>(), p[1].get<double>());
  for (const auto& f : jw.at("functions")) {
    LatticeFunction lf{host.is_discrete() ? host.op.orbitals() : 1, {}};
    for (const auto& [c, m] : cache::cell_map(f)) lf.values.emplace(c, VectorXcd(m.col(0)));
    w.functions.push_back(std::move(lf));
  }
  w.sample_x = jw.at("sample_x").get<std::vector<double>>();
  for (const auto& s : jw.at("samples")) w.samples.push_back(VectorXcd(cache::matrix(s).col(0)));
  w.window_radius = jw.at("window_radius").get<int>();
  w.dropped_mass = jw.at("dropped_mass").get<double>();
  for (const auto& m : jw.at("moments")) w.moments.push_back(m.get<std::array<double, 5>>());
  w.decay_rate = jw.at("decay_rate").get<std::vector<double>>();
  if (static_cast<int>(w.decay_rate.size()) != w.count || static_cast<int>(w.moments.size()) != w.count)
    throw std::runtime_error("inconsistent Wannier record");
  const auto& je = j.at("effective");
  a.effective.grid = grid;
  for (const auto& m : je.at("mu")) a.effective.mu.push_back(cache::matrix(m));
  if (a.effective.mu.size() != grid.size()) throw std::runtime_error("effective symbol has the wrong grid size");
  a.effective.hoppings = cache::cell_map(je.at("hoppings"));
  a.effective.radius = je.at("radius").get<int>();
  a.effective.dropped_mass = je.at("dropped_mass").get<double>();
  const auto& jf = j.at("frame");
  if (!jf.at("chern_number").is_null()) a.chern_number = jf.at("chern_number").get<int>();
  a.winding = jf.at("winding").get<int>();
  a.min_trial_gram = jf.at("min_trial_gram").get<double>();
  a.smoothness_constant = jf.at("smoothness_constant").get<double>();
  a.warnings = jf.at("warnings").get<std::vector<std::string>>();
  return a;
}

// ---------------------------------------------------------------------------
// Report

struct RunReport {
  std::string command;
  std::string config_hash;
  json slopes = json::object();
  std::vector<std::string> warnings;
  json timings = json::object();
  json results = json::object();
  std::vector<std::string> artifacts;

  json to_json() const {
    return {{"command", command},   {"config_hash", config_hash}, {"slopes", slopes}, {"warnings", warnings},
            {"timings", timings},   {"results", results},         {"artifacts", artifacts}};
  }
};

inline json slope_json(const SlopeFit& f) {
  const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"slope", num(f.slope)}, {"intercept", num(f.intercept)}, {"ci95", {num(f.lo), num(f.hi)}},
          {"points", f.points},    {"dropped_first", f.dropped_first}};
}

// ---------------------------------------------------------------------------
// Sweep points

struct SpectralPoint {
  double d_full_vs_effective = std::numeric_limits<double>::quiet_NaN();
  double d_full_vs_minimal = std::numeric_limits<double>::quiet_NaN();
  double d_effective_vs_minimal = std::numeric_limits<double>::quiet_NaN();
  int full_count = 0;
  int effective_count = 0;
};

/// Hausdorff distances between sigma(H_eps) in I and the spectra of the
/// magnetic and the minimally coupled effective matrices, all sampled on the
/// same magnetic k-grid of the host supercell.
inline SpectralPoint spectral_point(const HostModel& host, const EffectiveHamiltonian& eff, const FieldSpec& field,
                                    const Interval& window, int k_points) {
  SpectralPoint sp;
  const auto full = peierls_host(host, field);
  const auto sc = find_supercell(full);
  const auto sf = clip_to_window(magnetic_bloch_spectrum(full, k_points, k_points, sc).values, window);
  const auto se = magnetic_bloch_spectrum(magnetic_matrix(eff, host.lattice(), field), k_points, k_points, sc).values;
  const auto sm =
      magnetic_bloch_spectrum(minimally_coupled_matrix(eff, host.lattice(), field), k_points, k_points, sc).values;
  if (sf.empty()) throw EmptySpectrum("no eigenvalue of the magnetic host in I");
  sp.d_full_vs_effective = hausdorff(sf, se);
  sp.d_full_vs_minimal = hausdorff(sf, sm);
  sp.d_effective_vs_minimal = hausdorff(se, sm);
  sp.full_count = static_cast<int>(sf.size());
  sp.effective_count = static_cast<int>(se.size());
  return sp;
}

struct TorusPoint {
  double residual = std::numeric_limits<double>::quiet_NaN();
  double gram_deviation = 0.0;
  double gram_min_eigenvalue = 0.0;
  double loewdin_residual = 0.0;
  double x_decay_exponent = 0.0;
  double projector_gap = 0.0;
  double orthonormality = 0.0;
  int rank = 0;
  FamilyDecay decay;
  std::optional<EvolveCurve> evolve;
};

/// The magnetic Wannier family on the L x L torus and its diagnostics.
inline TorusPoint torus_point(const HostModel& host, const BandArtifacts& art, const FieldSpec& field,
                              const Interval& window, int cells_per_side, int residual_radius,
                              const std::vector<double>* times = nullptr) {
  TorusPoint tp;
  const auto t = make_torus(host.lattice(), field, cells_per_side);
  const MatrixXcd h = torus_matrix(peierls_host(host, field), t);
  const MatrixXcd m = torus_matrix(magnetic_matrix(art.effective, host.lattice(), field), t);
  const auto fam = magnetic_wannier(art.wannier, field, t, h, window);
  const int n = art.wannier.count;
  tp.residual = matrix_element_residual(fam.matrix_elements, m, t, n, residual_radius);
  tp.gram_deviation = fam.gram.deviation;
  tp.gram_min_eigenvalue = fam.gram.min_eigenvalue;
  tp.loewdin_residual = fam.gram.loewdin_residual;
  tp.x_decay_exponent = field.epsilon > 0.0 ? gram_offdiagonal_decay(fam.gram.x, t, n) : 0.0;
  tp.projector_gap = fam.projector_gap;
  tp.rank = fam.projection.rank;
  const auto id = MatrixXcd::Identity(fam.final.cols(), fam.final.cols());
  tp.orthonormality = max_abs(fam.final.adjoint() * fam.final - id);
  tp.decay = family_decay(fam.final, t, art.wannier.positions, n);
  if (times) tp.evolve = evolve_compare(fam.projection.eig, h * fam.final, fam.final, m, *times);
  return tp;
}

// ---------------------------------------------------------------------------
// Pipeline

class Pipeline {
 public:
  Pipeline(RunConfig cfg, std::filesystem::path out_dir, int threads)
      : cfg_(std::move(cfg)), out_(std::move(out_dir)), threads_(std::max(1, threads)) {
    report_.config_hash = config_hash(cfg_);
  }

  const RunReport& report() const { return report_; }

  RunReport run(const std::string& command) {
    report_.command = command;
    if (std::find(command_names().begin(), command_names().end(), command) == command_names().end())
      throw ValidationError("unknown command '" + command + "'");
    std::filesystem::create_directories(out_);
    const auto start = std::chrono::steady_clock::now();
    if (command == "bands") bands();
    else if (command == "island") island_command();
    else if (command == "wannier") wannier_command();
    else if (command == "hoppings") hoppings_command();
    else if (command == "magnetic-spectrum") magnetic_spectrum_command();
    else if (command == "compare-sweep") sweep_command(true);
    else if (command == "minimal-coupling") sweep_command(false);
    else if (command == "evolve") evolve_command();
    else if (command == "butterfly") butterfly_command();
    report_.timings["total"] = seconds_since(start);
    write_report();
    return report_;
  }

 private:
  static double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
  }

  template <class F>
  auto stage(const std::string& name, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      report_.timings[name] = seconds_since(start);
    } else {
      auto r = f();
      report_.timings[name] = seconds_since(start);
      return r;
    }
  }

  void warn(const std::string& w) { report_.warnings.push_back(w); }

  std::filesystem::path artifact(const std::string& name) {
    report_.artifacts.push_back(name);
    return out_ / name;
  }

  const HostModel& host() {
    if (!host_) host_ = stage("host", [&] { return build_host(cfg_.model); });
    return *host_;
  }

  Interval require_island() const {
    if (!cfg_.island.set())
      throw ConfigError("missing island interval: [island] lower and upper are required for '" + report_.command + "'");
    return cfg_.interval();
  }

  IslandOptions island_options() const {
    IslandOptions o;
    o.boundary_tolerance = cfg_.numerics.boundary_tolerance;
    return o;
  }

  const SpectralIsland& island() {
    if (!island_) {
      const auto interval = require_island();
      island_ = stage("island", [&] {
        return detect_island_refined(host(), interval, cfg_.numerics.bz_points, island_options());
      });
      for (const auto& w : island_->warnings) warn("island: " + w);
    }
    return *island_;
  }

  BandArtifacts compute_artifacts(const SpectralIsland& isl, const BrillouinGrid& grid, int wannier_radius,
                                  int hopping_radius) {
    BandArtifacts a;
    a.island = isl;
    std::optional<MatrixXcd> trials;
    if (!cfg_.numerics.trial_sites.empty()) trials = site_trials(host().fiber_dimension(), cfg_.numerics.trial_sites);
    const auto frame = smooth_frame(host(), isl, grid, trials);
    WannierOptions wo;
    wo.max_radius = wannier_radius;
    wo.mass_tolerance = cfg_.numerics.mass_tolerance;
    a.wannier = wannier_functions(host(), frame, wo);
    a.effective = effective_hamiltonian(host(), frame, hopping_radius);
    a.chern_number = frame.chern_number;
    a.winding = frame.winding;
    a.min_trial_gram = frame.min_trial_gram;
    a.smoothness_constant = frame.smoothness_constant;
    a.warnings = frame.warnings;
    return a;
  }

  /// Loads or computes the artifacts of one grid, keyed by the config hash.
  BandArtifacts cached_artifacts(const std::string& tag, const SpectralIsland& isl, const BrillouinGrid& grid,
                                 int wannier_radius, int hopping_radius) {
    const auto path = out_ / "cache" / (report_.config_hash + "-" + tag + ".json");
    if (cfg_.outputs.cache && std::filesystem::exists(path)) {
      try {
        std::ifstream in(path, std::ios::binary);
        const json j = json::parse(in);
        if (j.at("config_hash").get<std::string>() != report_.config_hash) throw std::runtime_error("hash mismatch");
        auto a = artifacts_from_json(j.at("artifacts"), isl, host(), grid);
        report_.results["cache"][tag] = "hit";
        return a;
      } catch (const std::exception& e) {
        warn("cache file '" + path.string() + "' is corrupt (" + e.what() + "); recomputing");
      }
    }
    auto a = compute_artifacts(isl, grid, wannier_radius, hopping_radius);
    report_.results["cache"][tag] = "miss";
    if (cfg_.outputs.cache) {
      std::filesystem::create_directories(path.parent_path());
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << json{{"config_hash", report_.config_hash}, {"artifacts", artifacts_json(a)}}.dump();
    }
    return a;
  }

  const BandArtifacts& main_artifacts() {
    if (!main_) {
      const auto& isl = island();
      main_ = stage("wannier", [&] {
        return cached_artifacts("main", isl, bz_grid(host().lattice(), cfg_.numerics.bz_points),
                                cfg_.numerics.wannier_radius, cfg_.numerics.hopping_radius);
      });
      for (const auto& w : main_->warnings) warn("frame: " + w);
    }
    return *main_;
  }

  /// Wannier functions on an L-point grid keep the full period, so that they
  /// are exactly periodic on the L x L torus.
  const BandArtifacts& torus_artifacts() {
    if (!torus_) {
      const int l = cfg_.numerics.window_cells;
      const auto grid = bz_grid(host().lattice(), l);
      torus_ = stage("torus_wannier", [&] {
        const auto isl = detect_island(band_structure(host(), grid), require_island(), island_options());
        return cached_artifacts("torus", isl, grid, -1, std::max(1, (l - 1) / 2));
      });
    }
    return *torus_;
  }

  std::vector<Fraction> sweep_fluxes() const {
    std::vector<Fraction> f;
    if (cfg_.magnetic.include_zero) f.push_back({0, 1});
    for (const auto& x : cfg_.magnetic.fluxes)
      if (x.num != 0 || !cfg_.magnetic.include_zero) f.push_back(x);
    return f;
  }

  void fit(const std::string& name, const std::vector<Fraction>& fluxes, const std::vector<double>& eps,
           const std::vector<double>& values) {
    std::vector<double> x, y;
    double baseline = 0.0;
    for (std::size_t i = 0; i < fluxes.size(); ++i) {
      if (fluxes[i].num == 0) {
        if (std::isfinite(values[i])) baseline = values[i];
        continue;
      }
      if (!std::isfinite(values[i])) continue;
      x.push_back(eps[i]);
      y.push_back(values[i]);
    }
    report_.slopes[name] = slope_json(fit_loglog(x, y, baseline));
  }

  // -- commands ------------------------------------------------------------

  void bands() {
    const auto bs = stage("bands", [&] { return band_structure(host(), bz_grid(host().lattice(), cfg_.numerics.bz_points)); });
    stage("output", [&] {
      CsvWriter csv(artifact("bands.csv"), {"theta_1", "theta_2", "band_index", "energy"});
      for (std::size_t k = 0; k < bs.grid.size(); ++k)
        for (int b = 0; b < bs.bands(); ++b)
          csv.row(bs.grid.nodes[k].x(), bs.grid.nodes[k].y(), b, bs.energies[k][b]);
    });
    report_.results["rows"] = static_cast<long>(bs.grid.size()) * bs.bands();
  }

  void island_command() {
    const auto& isl = island();
    report_.results["island"] = {{"lower", isl.interval.lo},         {"upper", isl.interval.hi},
                                 {"first_band", isl.first_band},     {"count", isl.count},
                                 {"gap", isl.gap_unbounded() ? json(nullptr) : json(isl.gap)},
                                 {"range", {isl.range_lo, isl.range_hi}}};
  }

  void wannier_command() {
    const auto& a = main_artifacts();
    stage("output", [&] {
      CsvWriter csv(artifact("wannier_decay.csv"), {"j", "m", "moment", "fitted_rate"});
      for (int j = 0; j < a.wannier.count; ++j)
        for (int m = 0; m <= 4; ++m) csv.row(j, m, a.wannier.moments[j][m], a.wannier.decay_rate[j]);
    });
    report_.results["wannier"] = {{"count", a.wannier.count},
                                  {"window_radius", a.wannier.window_radius},
                                  {"dropped_mass", a.wannier.dropped_mass},
                                  {"chern_number", a.chern_number ? json(*a.chern_number) : json(nullptr)},
                                  {"winding", a.winding},
                                  {"min_trial_gram", a.min_trial_gram},
                                  {"smoothness_constant", a.smoothness_constant}};
  }

  void hoppings_command() {
    const auto& a = main_artifacts();
    stage("output", [&] {
      CsvWriter csv(artifact("hoppings.csv"), {"gamma_1", "gamma_2", "j", "k", "re", "im"});
      for (const auto& [c, block] : a.effective.hoppings)
        for (int j = 0; j < block.rows(); ++j)
          for (int k = 0; k < block.cols(); ++k) csv.row(c[0], c[1], j, k, block(j, k).real(), block(j, k).imag());
    });
    report_.results["effective"] = {{"radius", a.effective.radius}, {"dropped_mass", a.effective.dropped_mass}};
  }

  void magnetic_spectrum_command() {
    const auto fluxes = sweep_fluxes();
    std::optional<Interval> window;
    if (cfg_.outputs.clip_to_island) window = require_island();
    const int k = cfg_.numerics.magnetic_k_points;
    const auto& h = host();
    const auto spectra = stage("spectra", [&] {
      return parallel_map(fluxes.size(), threads_, [&](std::size_t i) {
        const auto s = magnetic_bloch_spectrum(peierls_host(h, field_for(cfg_, fluxes[i])), k, k);
        return window ? clip_to_window(s.values, *window) : s.values;
      });
    });
    stage("output", [&] {
      CsvWriter csv(artifact("spectrum.csv"), {"flux_num", "flux_den", "energy"});
      for (std::size_t i = 0; i < fluxes.size(); ++i)
        for (double e : spectra[i]) csv.row(fluxes[i].num, fluxes[i].den, e);
    });
  }

  void sweep_command(bool with_torus) {
    const auto interval = require_island();
    const auto& a = main_artifacts();
    const BandArtifacts* ta = with_torus ? &torus_artifacts() : nullptr;
    const auto fluxes = sweep_fluxes();
    const auto& h = host();
    const int k = cfg_.numerics.magnetic_k_points;
    struct Point {
      double epsilon = 0.0;
      SpectralPoint spectral;
      std::optional<TorusPoint> torus;
      std::array<double, 3> kernel{};
      std::vector<std::string> errors;
    };
    const auto points = stage("sweep", [&] {
      return parallel_map(fluxes.size(), threads_, [&](std::size_t i) {
        Point p;
        const auto field = field_for(cfg_, fluxes[i]);
        p.epsilon = field.epsilon;
        check_declared_flux(field);
        try {
          p.spectral = spectral_point(h, a.effective, field, interval, k);
        } catch (const NumericalError& e) {
          p.errors.push_back(std::string("spectra: ") + e.what());
        }
        if (ta) {
          try {
            p.torus = torus_point(h, *ta, field, interval, cfg_.numerics.window_cells, 4);
          } catch (const GeometryError& e) {
            p.errors.push_back(std::string("torus: ") + e.what());
          } catch (const NumericalError& e) {
            p.errors.push_back(std::string("torus: ") + e.what());
          }
          if (h.is_discrete()) p.kernel = modified_kernel_deviation(a.wannier, field, 4);
        }
        return p;
      });
    });
    std::vector<double> eps, dfe, dfm, dem, res, gdev, pgap, k0, k2, k4;
    json rows = json::array();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& p = points[i];
      for (const auto& e : p.errors) warn("flux " + fluxes[i].str() + ": " + e);
      eps.push_back(p.epsilon);
      dfe.push_back(p.spectral.d_full_vs_effective);
      dfm.push_back(p.spectral.d_full_vs_minimal);
      dem.push_back(p.spectral.d_effective_vs_minimal);
      const double nan = std::numeric_limits<double>::quiet_NaN();
      res.push_back(p.torus ? p.torus->residual : nan);
      gdev.push_back(p.torus ? p.torus->gram_deviation : nan);
      pgap.push_back(p.torus ? p.torus->projector_gap : nan);
      k0.push_back(ta ? p.kernel[0] : nan);
      k2.push_back(ta ? p.kernel[1] : nan);
      k4.push_back(ta ? p.kernel[2] : nan);
      json r = {{"flux", fluxes[i].str()},
                {"epsilon", p.epsilon},
                {"failed", !p.errors.empty()},
                {"full_count", p.spectral.full_count},
                {"effective_count", p.spectral.effective_count}};
      if (p.torus) {
        const auto& t = *p.torus;
        r["torus"] = {{"residual", t.residual},
                      {"gram_deviation", t.gram_deviation},
                      {"gram_min_eigenvalue", t.gram_min_eigenvalue},
                      {"loewdin_residual", t.loewdin_residual},
                      {"x_decay_exponent", std::isfinite(t.x_decay_exponent) ? json(t.x_decay_exponent) : json(nullptr)},
                      {"projector_gap", t.projector_gap},
                      {"orthonormality", t.orthonormality},
                      {"rank", t.rank},
                      {"moments", t.decay.moments},
                      {"decay_rate", t.decay.rate}};
        r["kernel_deviation"] = p.kernel;
      }
      rows.push_back(r);
    }
    report_.results["points"] = rows;
    if (!a.wannier.decay_rate.empty())
      report_.results["nonmagnetic_rate"] = *std::min_element(a.wannier.decay_rate.begin(), a.wannier.decay_rate.end());
    fit("d_full_vs_effective", fluxes, eps, dfe);
    fit("d_full_vs_minimal", fluxes, eps, dfm);
    fit("d_effective_vs_minimal", fluxes, eps, dem);
    if (ta) {
      fit("max_matrix_element_residual", fluxes, eps, res);
      fit("gram_deviation", fluxes, eps, gdev);
      fit("projector_gap", fluxes, eps, pgap);
      fit("kernel_deviation_m0", fluxes, eps, k0);
      fit("kernel_deviation_m2", fluxes, eps, k2);
      fit("kernel_deviation_m4", fluxes, eps, k4);
    }
    stage("output", [&] {
      CsvWriter csv(artifact("sweep.csv"), {"epsilon", "d_full_vs_effective", "d_full_vs_minimal",
                                            "d_effective_vs_minimal", "max_matrix_element_residual"});
      for (std::size_t i = 0; i < points.size(); ++i) csv.row(eps[i], dfe[i], dfm[i], dem[i], res[i]);
    });
  }

  void evolve_command() {
    const auto interval = require_island();
    const auto& ta = torus_artifacts();
    const auto fluxes = sweep_fluxes();
    const auto& h = host();
    std::vector<double> times;
    for (int i = 0; i <= cfg_.numerics.t_steps; ++i) times.push_back(cfg_.numerics.t_max * i / cfg_.numerics.t_steps);
    if (std::find(times.begin(), times.end(), 1.0) == times.end()) {
      times.push_back(1.0);
      std::sort(times.begin(), times.end());
    }
    const std::size_t t1 = std::find(times.begin(), times.end(), 1.0) - times.begin();
    const auto curves = stage("evolve", [&] {
      return parallel_map(fluxes.size(), threads_, [&](std::size_t i) {
        const auto field = field_for(cfg_, fluxes[i]);
        return std::make_pair(field.epsilon,
                              *torus_point(h, ta, field, interval, cfg_.numerics.window_cells, 4, &times).evolve);
      });
    });
    std::vector<double> eps, err1;
    json rows = json::array();
    for (std::size_t i = 0; i < curves.size(); ++i) {
      const auto& [e, c] = curves[i];
      eps.push_back(e);
      err1.push_back(c.errors[t1]);
      rows.push_back({{"flux", fluxes[i].str()},
                      {"epsilon", e},
                      {"commutator_norm", c.commutator_norm},
                      {"envelope", c.envelope},
                      {"error_t1", c.errors[t1]},
                      {"error_t0", c.errors.front()},
                      {"duhamel_holds", c.duhamel_holds}});
    }
    report_.results["points"] = rows;
    fit("evolve_error_t1", fluxes, eps, err1);
    stage("output", [&] {
      CsvWriter csv(artifact("evolve.csv"), {"epsilon", "t", "error"});
      for (const auto& [e, c] : curves)
        for (std::size_t k = 0; k < c.times.size(); ++k) csv.row(e, c.times[k], c.errors[k]);
    });
  }

  void butterfly_command() {
    std::vector<Fraction> fluxes;
    for (int q = 1; q <= cfg_.magnetic.q_max; ++q)
      for (int p = 0; p < q; ++p)
        if (std::gcd(p, q) == 1) fluxes.push_back({p, q});
    std::optional<Interval> window;
    if (cfg_.outputs.clip_to_island) window = require_island();
    const int k = cfg_.numerics.magnetic_k_points;
    const auto& h = host();
    long rows = 0;
    stage("butterfly", [&] {
      CsvWriter csv(artifact("spectrum.csv"), {"flux_num", "flux_den", "energy"});
      const std::size_t batch = static_cast<std::size_t>(4 * threads_);
      for (std::size_t start = 0; start < fluxes.size(); start += batch) {
        const std::size_t count = std::min(batch, fluxes.size() - start);
        const auto spectra = parallel_map(count, threads_, [&](std::size_t i) {
          FieldSpec f;
          f.kind = GaugeKind::landau_uniform;
          f.b = cfg_.magnetic.b;
          f.epsilon = kTwoPi * fluxes[start + i].value() / cfg_.magnetic.b;
          const auto s = magnetic_bloch_spectrum(peierls_host(h, f), k, k);
          return window ? clip_to_window(s.values, *window) : s.values;
        });
        for (std::size_t i = 0; i < count; ++i)
          for (double e : spectra[i]) {
            csv.row(fluxes[start + i].num, fluxes[start + i].den, e);
            ++rows;
          }
        csv.flush();
      }
    });
    report_.results["fluxes"] = fluxes.size();
    report_.results["rows"] = rows;
  }

  void write_report() {
    std::ofstream out(out_ / "report.json", std::ios::binary | std::ios::trunc);
    out << report_.to_json().dump(2) << '\n';
  }

  RunConfig cfg_;
  std::filesystem::path out_;
  int threads_ = 1;
  RunReport report_;
  std::optional<HostModel> host_;
  std::optional<SpectralIsland> island_;
  std::optional<BandArtifacts> main_, torus_;
};

/// Runs one command; `out_dir` overrides the configured output directory when non-empty.
inline RunReport run_pipeline(const RunConfig& cfg, const std::string& command, std::filesystem::path out_dir = {},
                              int threads = 1) {
  if (out_dir.empty()) out_dir = cfg.outputs.directory;
  Pipeline p(cfg, out_dir, threads);
  return p.run(command);
}

}  // namespace peierls
