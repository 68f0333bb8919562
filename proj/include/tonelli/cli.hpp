#pragma once

// Batch front-end: configuration grammar, model registry, record serialization and the five
// subcommands. The executable in tools/ only parses flags and dispatches here.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tonelli/action.hpp"
#include "tonelli/fixtures.hpp"
#include "tonelli/levels.hpp"
#include "tonelli/mane.hpp"
#include "tonelli/model.hpp"
#include "tonelli/search.hpp"

namespace tonelli::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { Ok = 0, VerifyFailed = 1, RuntimeFailure = 2, Usage = 64 };

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct ModelSpec {
  std::string name = "kinetic";
  double side1 = 1.0, side2 = 1.0;
  double s = 2.0, eps = 0.0;
  double r1 = 1.0, r2 = std::sqrt(2.0), R = 2.0;
  std::vector<TrigTerm> potential, a1, a2;
  bool clamp = false;
};

struct RunConfig {
  ModelSpec model;
  double k = 0.25;
  std::vector<double> k_grid;
  int h = 0;  ///< 0 selects the default discretization
  std::uint64_t seed = 0;
  std::string out = "out";

  std::string orbit_mode = "minimize";  ///< minimize | reference | geodesic
  std::string reference = "Gamma";
  double perturb = 1e-3;
  std::array<int, 2> wind{1, 0};
  int iterates = 8;
  std::string input;

  int n_seeds = 12;
  int n_max = 3;
  int centers_per_side = 4;
  int radii = 6;

  ActionOptions action{};
  MinimaxOptions minimax{};
  UpperOptions upper{};
  int candidates = 6;

  std::vector<std::string> keys_set;  ///< "section.key" entries present in the file
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x)) {
    throw Error(ErrorKind::ConfigError, key + ": expected a number, got '" + v + "'");
  }
  return x;
}

inline long to_long(const std::string& key, const std::string& v) {
  long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw Error(ErrorKind::ConfigError, key + ": expected an integer, got '" + v + "'");
  }
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::ConfigError, key + ": expected true or false, got '" + v + "'");
}

/// "amp m1 m2 phase; amp m1 m2 phase"
inline std::vector<TrigTerm> to_terms(const std::string& key, const std::string& v) {
  std::vector<TrigTerm> out;
  for (const auto& term : split(v, ';')) {
    std::istringstream is(term);
    std::vector<std::string> f;
    for (std::string w; is >> w;) f.push_back(w);
    if (f.size() < 3 || f.size() > 4) {
      throw Error(ErrorKind::ConfigError, key + ": a term is 'amp m1 m2 [phase]', got '" + term + "'");
    }
    out.push_back({to_double(key, f[0]), static_cast<int>(to_long(key, f[1])), static_cast<int>(to_long(key, f[2])),
                   f.size() == 4 ? to_double(key, f[3]) : 0.0});
  }
  return out;
}

inline double positive(const std::string& key, double x) {
  if (!(x > 0.0)) throw Error(ErrorKind::ConfigError, key + " must be positive");
  return x;
}

inline int at_least(const std::string& key, long x, long lo) {
  if (x < lo) throw Error(ErrorKind::ConfigError, key + " must be >= " + std::to_string(lo));
  return static_cast<int>(x);
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& schema() {
  static const std::map<std::string, Setter> s = {
      {"model.name", [](RunConfig& c, auto&, auto& v) { c.model.name = v; }},
      {"model.side1", [](RunConfig& c, auto& k, auto& v) { c.model.side1 = positive(k, to_double(k, v)); }},
      {"model.side2", [](RunConfig& c, auto& k, auto& v) { c.model.side2 = positive(k, to_double(k, v)); }},
      {"model.s", [](RunConfig& c, auto& k, auto& v) { c.model.s = to_double(k, v); }},
      {"model.eps", [](RunConfig& c, auto& k, auto& v) { c.model.eps = to_double(k, v); }},
      {"model.r1", [](RunConfig& c, auto& k, auto& v) { c.model.r1 = positive(k, to_double(k, v)); }},
      {"model.r2", [](RunConfig& c, auto& k, auto& v) { c.model.r2 = positive(k, to_double(k, v)); }},
      {"model.R", [](RunConfig& c, auto& k, auto& v) { c.model.R = positive(k, to_double(k, v)); }},
      {"model.potential", [](RunConfig& c, auto& k, auto& v) { c.model.potential = to_terms(k, v); }},
      {"model.a1", [](RunConfig& c, auto& k, auto& v) { c.model.a1 = to_terms(k, v); }},
      {"model.a2", [](RunConfig& c, auto& k, auto& v) { c.model.a2 = to_terms(k, v); }},
      {"model.clamp", [](RunConfig& c, auto& k, auto& v) { c.model.clamp = to_bool(k, v); }},
      {"run.k", [](RunConfig& c, auto& k, auto& v) { c.k = to_double(k, v); }},
      {"run.k_grid",
       [](RunConfig& c, auto& k, auto& v) {
         c.k_grid.clear();
         for (const auto& x : split(v, ',')) c.k_grid.push_back(to_double(k, x));
       }},
      {"run.h",
       [](RunConfig& c, auto& k, auto& v) { c.h = v == "auto" ? 0 : at_least(k, to_long(k, v), 2); }},
      {"run.seed", [](RunConfig& c, auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(at_least(k, to_long(k, v), 0)); }},
      {"run.out", [](RunConfig& c, auto&, auto& v) { c.out = v; }},
      {"orbit.mode",
       [](RunConfig& c, auto& k, auto& v) {
         if (v != "minimize" && v != "reference" && v != "geodesic") {
           throw Error(ErrorKind::ConfigError, k + ": expected minimize, reference or geodesic");
         }
         c.orbit_mode = v;
       }},
      {"orbit.reference",
       [](RunConfig& c, auto& k, auto& v) {
         if (v != "Gamma" && v != "Psi") throw Error(ErrorKind::ConfigError, k + ": expected Gamma or Psi");
         c.reference = v;
       }},
      {"orbit.perturb", [](RunConfig& c, auto& k, auto& v) { c.perturb = to_double(k, v); }},
      {"orbit.wind",
       [](RunConfig& c, auto& k, auto& v) {
         const auto f = split(v, ',');
         if (f.size() != 2) throw Error(ErrorKind::ConfigError, k + ": expected 'a, b'");
         c.wind = {static_cast<int>(to_long(k, f[0])), static_cast<int>(to_long(k, f[1]))};
       }},
      {"orbit.iterates", [](RunConfig& c, auto& k, auto& v) { c.iterates = at_least(k, to_long(k, v), 1); }},
      {"orbit.input", [](RunConfig& c, auto&, auto& v) { c.input = v; }},
      {"search.n_seeds", [](RunConfig& c, auto& k, auto& v) { c.n_seeds = at_least(k, to_long(k, v), 1); }},
      {"search.n_max", [](RunConfig& c, auto& k, auto& v) { c.n_max = static_cast<int>(to_long(k, v)); }},
      {"search.centers_per_side",
       [](RunConfig& c, auto& k, auto& v) { c.centers_per_side = at_least(k, to_long(k, v), 1); }},
      {"search.radii", [](RunConfig& c, auto& k, auto& v) { c.radii = at_least(k, to_long(k, v), 1); }},
      {"tolerances.tol_crit",
       [](RunConfig& c, auto& k, auto& v) { c.action.tol_crit = positive(k, to_double(k, v)); }},
      {"tolerances.rank_rel_tol",
       [](RunConfig& c, auto& k, auto& v) { c.action.rank_rel_tol = positive(k, to_double(k, v)); }},
      {"tolerances.epsilon",
       [](RunConfig& c, auto& k, auto& v) { c.action.epsilon = positive(k, to_double(k, v)); }},
      {"tolerances.rho", [](RunConfig& c, auto& k, auto& v) { c.action.rho = positive(k, to_double(k, v)); }},
      {"tolerances.flow_abs_tol",
       [](RunConfig& c, auto& k, auto& v) { c.action.shoot.flow.abs_tol = positive(k, to_double(k, v)); }},
      {"tolerances.flow_rel_tol",
       [](RunConfig& c, auto& k, auto& v) { c.action.shoot.flow.rel_tol = positive(k, to_double(k, v)); }},
      {"tolerances.shoot_tol",
       [](RunConfig& c, auto& k, auto& v) { c.action.shoot.tol = positive(k, to_double(k, v)); }},
      {"minimax.nodes", [](RunConfig& c, auto& k, auto& v) { c.minimax.nodes = at_least(k, to_long(k, v), 3); }},
      {"minimax.max_sweeps",
       [](RunConfig& c, auto& k, auto& v) { c.minimax.max_sweeps = at_least(k, to_long(k, v), 1); }},
      {"minimax.step", [](RunConfig& c, auto& k, auto& v) { c.minimax.step = positive(k, to_double(k, v)); }},
      {"minimax.climb_start",
       [](RunConfig& c, auto& k, auto& v) { c.minimax.climb_start = at_least(k, to_long(k, v), 0); }},
      {"mane.family_size",
       [](RunConfig& c, auto& k, auto& v) { c.upper.family_size = at_least(k, to_long(k, v), 0); }},
      {"mane.opt_grid", [](RunConfig& c, auto& k, auto& v) { c.upper.opt_grid = at_least(k, to_long(k, v), 4); }},
      {"mane.cert_grid", [](RunConfig& c, auto& k, auto& v) { c.upper.cert_grid = at_least(k, to_long(k, v), 4); }},
      {"mane.candidates", [](RunConfig& c, auto& k, auto& v) { c.candidates = at_least(k, to_long(k, v), 1); }},
  };
  return s;
}

/// Model keys each registered model reads; setting any other model key is an error.
inline const std::map<std::string, std::vector<std::string>>& model_keys() {
  static const std::map<std::string, std::vector<std::string>> m = {
      {"kinetic", {"side1", "side2", "clamp"}},
      {"mechanical", {"side1", "side2", "potential", "clamp"}},
      {"magnetic", {"side1", "side2", "a1", "a2", "potential", "clamp"}},
      {"magnetic_strip", {"s", "eps", "clamp"}},
      {"magnetic_cell", {"s", "clamp"}},
      {"counterexample", {"r1", "r2", "R", "clamp"}},
  };
  return m;
}

}  // namespace detail

/// Grammar: one entry per line, `key = value`; `[section]` opens a section; `#` starts a
/// comment. Every key must belong to the schema; a key may appear once.
inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::string section;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorKind::ConfigError, where + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::ConfigError, where + "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = detail::schema().find(full);
    if (it == detail::schema().end()) throw Error(ErrorKind::ConfigError, where + "unknown key '" + full + "'");
    if (std::find(cfg.keys_set.begin(), cfg.keys_set.end(), full) != cfg.keys_set.end()) {
      throw Error(ErrorKind::ConfigError, where + "duplicate key '" + full + "'");
    }
    try {
      it->second(cfg, full, value);
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, where + e.what());
    }
    cfg.keys_set.push_back(full);
  }
  const auto mk = detail::model_keys().find(cfg.model.name);
  if (mk == detail::model_keys().end()) {
    throw Error(ErrorKind::ConfigError, "unknown model '" + cfg.model.name + "'");
  }
  for (const auto& k : cfg.keys_set) {
    if (k.rfind("model.", 0) != 0 || k == "model.name") continue;
    const std::string leaf = k.substr(6);
    if (std::find(mk->second.begin(), mk->second.end(), leaf) == mk->second.end()) {
      throw Error(ErrorKind::ConfigError, "key '" + k + "' is not used by model " + cfg.model.name);
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline LagrangianModel make_model(const RunConfig& c) {
  const auto& m = c.model;
  std::optional<LagrangianModel> model;
  const TorusConfig torus(m.side1, m.side2);
  if (m.name == "kinetic") model = kinetic_model(torus);
  else if (m.name == "mechanical") model = mechanical_model(torus, m.potential);
  else if (m.name == "magnetic") model = exact_magnetic_model(torus, m.a1, m.a2, m.potential);
  else if (m.name == "magnetic_strip") model = magnetic_strip_fixture(m.s, m.eps);
  else if (m.name == "magnetic_cell") model = magnetic_cell_fixture(m.s);
  else if (m.name == "counterexample") model = counterexample_model({m.r1, m.r2, m.R});
  else throw Error(ErrorKind::ConfigError, "unknown model '" + m.name + "'");
  if (m.clamp) return clamp_quadratic_at_infinity(*model, c.k).model;
  return *model;
}

inline json tolerances_json(const RunConfig& c) {
  return {{"tol_crit", c.action.tol_crit},
          {"rank_rel_tol", c.action.rank_rel_tol},
          {"epsilon", c.action.epsilon},
          {"rho", c.action.rho},
          {"tau_floor", c.action.floor()},
          {"flow_abs_tol", c.action.shoot.flow.abs_tol},
          {"flow_rel_tol", c.action.shoot.flow.rel_tol},
          {"shoot_tol", c.action.shoot.tol}};
}

/// Canonical form of the effective configuration (after flag overrides); hashed into records.
inline json canonical_json(const RunConfig& c) {
  return {{"model",
           {{"name", c.model.name},
            {"side1", c.model.side1},
            {"side2", c.model.side2},
            {"s", c.model.s},
            {"eps", c.model.eps},
            {"r1", c.model.r1},
            {"r2", c.model.r2},
            {"R", c.model.R},
            {"potential", c.model.potential},
            {"a1", c.model.a1},
            {"a2", c.model.a2},
            {"clamp", c.model.clamp}}},
          {"run", {{"k", c.k}, {"k_grid", c.k_grid}, {"h", c.h}, {"seed", c.seed}}},
          {"orbit",
           {{"mode", c.orbit_mode},
            {"reference", c.reference},
            {"perturb", c.perturb},
            {"wind", c.wind},
            {"iterates", c.iterates},
            {"input", c.input}}},
          {"search",
           {{"n_seeds", c.n_seeds},
            {"n_max", c.n_max},
            {"centers_per_side", c.centers_per_side},
            {"radii", c.radii}}},
          {"tolerances", tolerances_json(c)},
          {"minimax",
           {{"nodes", c.minimax.nodes},
            {"max_sweeps", c.minimax.max_sweeps},
            {"step", c.minimax.step},
            {"climb_start", c.minimax.climb_start}}},
          {"mane",
           {{"family_size", c.upper.family_size},
            {"opt_grid", c.upper.opt_grid},
            {"cert_grid", c.upper.cert_grid},
            {"candidates", c.candidates}}}};
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical_json(c).dump());
  return os.str();
}

inline json meta_json(const RunConfig& c) {
  return {{"config_hash", config_hash(c)}, {"seed", c.seed}, {"version", kVersion}, {"tolerances", tolerances_json(c)}};
}

// ---------------------------------------------------------------------------
// Records

inline json loop_json(const DiscreteLoop& loop) {
  json pts = json::array();
  for (const auto& p : loop.points) pts.push_back({p[0], p[1]});
  return {{"h", loop.h()}, {"tau", loop.tau}, {"points", pts}};
}

inline DiscreteLoop loop_from_json(const json& j) {
  DiscreteLoop loop;
  loop.tau = j.at("tau").get<double>();
  for (const auto& p : j.at("points")) loop.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  return loop;
}

inline json complex_list(const std::vector<std::complex<double>>& v) {
  json out = json::array();
  for (const auto& z : v) out.push_back({z.real(), z.imag()});
  return out;
}

inline json orbit_json(const LagrangianModel& model, double k, const OrbitRecord& r, const RunConfig& c) {
  return {{"type", "orbit"},
          {"model", model.name()},
          {"params", model.params()},
          {"k", k},
          {"loop", loop_json(r.loop)},
          {"action", r.action},
          {"period", r.period},
          {"length", r.length},
          {"gradient_norm", r.gradient_norm},
          {"energy_error", r.energy_error},
          {"winding", r.winding},
          {"self_intersections", self_intersections(model.torus(), r.loop)},
          {"is_local_min", r.is_local_min},
          {"ind_H", r.spectral.ind_H},
          {"nul_H", r.spectral.nul_H},
          {"ind_h", r.spectral.ind_h},
          {"nul_h", r.spectral.nul_h},
          {"gap_H", r.spectral.gap_H},
          {"gap_h", r.spectral.gap_h},
          {"monodromy_eigenvalues", complex_list(r.spectral.monodromy_eigenvalues)},
          {"initial", {{"q", {r.initial.q[0], r.initial.q[1]}}, {"v", {r.initial.v[0], r.initial.v[1]}}}},
          {"iterations", r.iterations},
          {"meta", meta_json(c)}};
}

inline json error_json(const Error& e, const RunConfig* c) {
  json j{{"type", "error"}, {"kind", std::string(to_string(e.kind()))}, {"message", e.what()}};
  if (c) j["meta"] = meta_json(*c);
  return j;
}

inline json mane_json(const ManeEstimate& m, const RunConfig& c, const std::string& model) {
  json modes = json::array();
  for (const auto& f : m.upper.modes) modes.push_back({{"m1", f.m1}, {"m2", f.m2}, {"a", f.a}, {"b", f.b}});
  json j{{"type", "mane"},
         {"model", model},
         {"e0", m.e0},
         {"e0_argmax", {m.e0_argmax[0], m.e0_argmax[1]}},
         {"c_upper", m.c_upper},
         {"c_lower", m.c_lower},
         {"upper_certificate",
          {{"family_size", m.upper.family_size},
           {"pbar", {m.upper.pbar[0], m.upper.pbar[1]}},
           {"modes", modes},
           {"grid", m.upper.grid},
           {"grid_max", m.upper.grid_max},
           {"slack", m.upper.slack}}},
         {"lower_certificate", nullptr},
         {"meta", meta_json(c)}};
  if (m.lower) j["lower_certificate"] = {{"k", m.lower->k}, {"action", m.lower->action}, {"loop", loop_json(m.lower->loop)}};
  return j;
}

inline ManeEstimate mane_from_json(const json& j) {
  ManeEstimate m;
  m.e0 = j.at("e0").get<double>();
  m.e0_argmax = Vec2(j.at("e0_argmax").at(0).get<double>(), j.at("e0_argmax").at(1).get<double>());
  m.c_upper = j.at("c_upper").get<double>();
  m.c_lower = j.at("c_lower").get<double>();
  const auto& u = j.at("upper_certificate");
  m.upper.family_size = u.at("family_size").get<int>();
  m.upper.pbar = Vec2(u.at("pbar").at(0).get<double>(), u.at("pbar").at(1).get<double>());
  for (const auto& f : u.at("modes")) {
    m.upper.modes.push_back({f.at("m1").get<int>(), f.at("m2").get<int>(), f.at("a").get<double>(), f.at("b").get<double>()});
  }
  m.upper.grid = u.at("grid").get<int>();
  m.upper.grid_max = u.at("grid_max").get<double>();
  m.upper.slack = u.at("slack").get<double>();
  if (!j.at("lower_certificate").is_null()) {
    const auto& l = j.at("lower_certificate");
    m.lower = LowerCertificate{l.at("k").get<double>(), loop_from_json(l.at("loop")), l.at("action").get<double>()};
  }
  return m;
}

// ---------------------------------------------------------------------------
// Output helpers

class OutputDir {
 public:
  explicit OutputDir(const std::string& path) : path_(path) { std::filesystem::create_directories(path_); }

  std::ofstream open(const std::string& name) const {
    std::ofstream os(path_ / name, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::InvalidArgument, "cannot write " + (path_ / name).string());
    return os;
  }

  std::filesystem::path file(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_trace(const OutputDir& out, const std::string& name, const std::vector<Vec2>& pts) {
  auto os = out.open(name);
  os << std::setprecision(17);
  for (const auto& p : pts) os << p[0] << ' ' << p[1] << '\n';
}

inline std::vector<json> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot read record file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<json> out;
  // a single JSON document, or JSON lines
  try {
    out.push_back(json::parse(text));
    return out;
  } catch (const json::parse_error&) {
  }
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    if (!detail::trim(line).empty()) out.push_back(json::parse(line));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

namespace detail {

inline DescendOptions descend_options(const RunConfig& c) {
  DescendOptions d;
  d.action = c.action;
  return d;
}

inline LocalMinOptions local_min_options(const RunConfig& c) {
  LocalMinOptions o;
  o.descend = descend_options(c);
  o.n_seeds = c.n_seeds;
  o.seeds.centers_per_side = c.centers_per_side;
  o.seeds.radii = c.radii;
  return o;
}

/// Seed loop for the reference and geodesic modes: exact discretization with every coordinate
/// and tau perturbed by a uniform relative amount drawn from the run's RNG.
inline DiscreteLoop perturbed_seed(const LagrangianModel& model, const RunConfig& c) {
  DiscreteLoop loop;
  if (c.orbit_mode == "reference") {
    if (c.model.name != "counterexample") {
      throw Error(ErrorKind::ConfigError, "orbit.mode = reference requires model.name = counterexample");
    }
    const auto orbits = reference_orbits({c.model.r1, c.model.r2, c.model.R}, c.k);
    loop = reference_loop(orbits[c.reference == "Gamma" ? 0 : 1], c.h > 0 ? c.h : 64);
  } else {
    loop = flat_geodesic_loop(model.torus(), c.wind, c.k, c.h > 0 ? c.h : 16);
  }
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double scale = model.torus().min_side() * c.perturb;
  for (auto& p : loop.points) p = model.torus().wrap(p + scale * Vec2(u(rng), u(rng)));
  loop.tau *= 1.0 + c.perturb * u(rng);
  return loop;
}

}  // namespace detail

inline int cmd_orbit(const RunConfig& c, std::ostream& log = std::cerr) {
  const OutputDir out(c.out);
  auto os = out.open("orbits.jsonl");
  const auto model = make_model(c);
  try {
    OrbitRecord r;
    if (c.orbit_mode == "minimize") {
      r = find_local_minimizer(model, c.k, detail::local_min_options(c));
    } else {
      auto d = detail::descend_options(c);
      d.mode = DescentMode::Critical;
      r = descend(model, c.k, detail::perturbed_seed(model, c), d);
    }
    os << orbit_json(model, c.k, r, c).dump() << '\n';
    write_trace(out, "orbit_0.trace", dense_trace(model, r, 400, c.action.shoot.flow));
    log << "orbit: action " << r.action << ", period " << r.period << ", ind_H " << r.spectral.ind_H << '\n';
    return Ok;
  } catch (const Error& e) {
    os << error_json(e, &c).dump() << '\n';
    log << e.what() << '\n';
    // not finding a negative-action minimizer is an outcome, not a failure
    return e.kind() == ErrorKind::NotFound ? Ok : RuntimeFailure;
  }
}

inline int cmd_minimax(const RunConfig& c, std::ostream& log = std::cerr) {
  if (c.n_max < 1) throw Error(ErrorKind::UsageError, "search.n_max must be >= 1");
  const OutputDir out(c.out);
  auto os = out.open("minimax.jsonl");
  const auto model = make_model(c);
  try {
    const auto mu = find_local_minimizer(model, c.k, detail::local_min_options(c));
    MinimaxOptions mo = c.minimax;
    mo.descend = detail::descend_options(c);
    const DedupThresholds t;
    const auto scan = multiplicity_scan(model, c.k, c.n_max, mu, mo, t);
    os << json{{"type", "minimizer"}, {"orbit", orbit_json(model, c.k, scan.minimizer, c)}}.dump() << '\n';
    for (const auto& r : scan.minimax) {
      os << json{{"type", "minimax"},
                 {"n", r.n},
                 {"c", r.value},
                 {"sweeps", r.sweeps},
                 {"max_node", r.max_node},
                 {"path_actions", r.path_actions},
                 {"meta", meta_json(c)}}
                .dump()
         << '\n';
      log << "c(" << r.n << ") = " << r.value << '\n';
    }
    for (std::size_t i = 0; i < scan.orbits.size(); ++i) {
      os << orbit_json(model, c.k, scan.orbits[i], c).dump() << '\n';
      write_trace(out, "orbit_" + std::to_string(i) + ".trace", dense_trace(model, scan.orbits[i], 400, c.action.shoot.flow));
    }
    os << json{{"type", "dedup"},
               {"candidates", static_cast<int>(scan.minimax.size()) + 1},
               {"distinct", scan.orbits.size()},
               {"thresholds",
                {{"hausdorff_rel", t.hausdorff_rel}, {"period_rel", t.period_rel}, {"max_ratio", t.max_ratio}}},
               {"meta", meta_json(c)}}
              .dump()
       << '\n';
    return Ok;
  } catch (const Error& e) {
    os << error_json(e, &c).dump() << '\n';
    log << e.what() << '\n';
    return RuntimeFailure;
  }
}

inline LowerOptions lower_options(const RunConfig& c) {
  LowerOptions lo;
  lo.action = c.action;
  lo.candidates = c.candidates;
  lo.seeds.centers_per_side = c.centers_per_side;
  lo.seeds.radii = c.radii;
  return lo;
}

inline json verify_mane_json(const LagrangianModel& model, const json& j, const RunConfig& c) {
  const auto m = mane_from_json(j);
  const auto chk = verify_estimate(model, m, c.action);
  return {{"type", "verify"},
          {"record", "mane"},
          {"upper_ok", chk.upper_ok},
          {"lower_ok", chk.lower_ok},
          {"sandwich_ok", chk.sandwich_ok},
          {"ok", chk.upper_ok && chk.lower_ok && chk.sandwich_ok}};
}

inline int cmd_mane(const RunConfig& c, const std::string& verify_path = "", std::ostream& log = std::cerr) {
  const OutputDir out(c.out);
  const auto model = make_model(c);
  if (!verify_path.empty()) {
    bool ok = true;
    auto os = out.open("verify.jsonl");
    for (const auto& j : read_records(verify_path)) {
      const auto v = verify_mane_json(model, j, c);
      ok = ok && v["ok"].get<bool>();
      os << v.dump() << '\n';
    }
    log << (ok ? "certificates verified" : "certificate verification FAILED") << '\n';
    return ok ? Ok : VerifyFailed;
  }
  std::vector<double> grid = c.k_grid;
  if (grid.empty()) grid = {c.k};
  const auto m = mane_estimate(model, grid, c.upper, lower_options(c));
  auto os = out.open("mane.json");
  os << mane_json(m, c, model.name()).dump(2) << '\n';
  log << "e0 = " << m.e0 << ", c in [" << m.c_lower << ", " << m.c_upper << "]\n";
  return Ok;
}

/// Reads the first orbit record of a file, or produces one with the orbit command's settings.
inline OrbitRecord load_or_compute_orbit(const LagrangianModel& model, const RunConfig& c, double& k) {
  if (!c.input.empty()) {
    for (const auto& j : read_records(c.input)) {
      const json* rec = &j;
      if (j.value("type", "") == "minimizer") rec = &j.at("orbit");
      if (rec->value("type", "") != "orbit") continue;
      if (rec->at("model").get<std::string>() != model.name()) {
        throw Error(ErrorKind::ConfigError, "orbit record was computed for model " + rec->at("model").get<std::string>());
      }
      k = rec->at("k").get<double>();
      const DiscreteLoop loop = loop_from_json(rec->at("loop"));
      const auto ev = evaluate_loop(model, k, loop, c.action);
      return make_record(model, k, loop, ev, c.action);
    }
    throw Error(ErrorKind::ConfigError, "no orbit record in " + c.input);
  }
  k = c.k;
  if (c.orbit_mode == "minimize") return find_local_minimizer(model, k, detail::local_min_options(c));
  auto d = detail::descend_options(c);
  d.mode = DescentMode::Critical;
  return descend(model, k, detail::perturbed_seed(model, c), d);
}

inline int cmd_spectrum(const RunConfig& c, std::ostream& log = std::cerr) {
  const OutputDir out(c.out);
  const auto model = make_model(c);
  try {
    double k = c.k;
    const OrbitRecord r = load_or_compute_orbit(model, c, k);
    const auto ev = evaluate_loop(model, k, r.loop, c.action);
    require_critical(ev, c.action);
    {
      auto csv = out.open("spectrum.csv");
      csv << std::setprecision(17) << "matrix,index,eigenvalue\n";
      for (long i = 0; i < r.spectral.eigenvalues_full.size(); ++i) {
        csv << "H," << i << ',' << r.spectral.eigenvalues_full[i] << '\n';
      }
      for (long i = 0; i < r.spectral.eigenvalues_restricted.size(); ++i) {
        csv << "h," << i << ',' << r.spectral.eigenvalues_restricted[i] << '\n';
      }
    }
    const Mat4 P = r.spectral.monodromy;
    json table = json::array();
    for (int m = 1; m <= c.iterates; ++m) {
      const auto loop_m = iterate(r.loop, m);
      const auto rep = spectral_report(model, k, loop_m, evaluate_loop(model, k, loop_m, c.action), c.action, false);
      table.push_back({{"m", m},
                       {"ind_H", rep.ind_H},
                       {"nul_H", rep.nul_H},
                       {"ind_h", rep.ind_h},
                       {"nul_h", rep.nul_h},
                       {"nul_monodromy", nullity_via_monodromy(P, m)}});
    }
    json classes = json::array();
    for (const auto& cl : nullity_partition(P, c.iterates)) {
      classes.push_back({{"representative", cl.representative}, {"nullity", cl.nullity}, {"members", cl.members}});
    }
    json pj = json::array();
    for (int i = 0; i < 4; ++i) pj.push_back({P(i, 0), P(i, 1), P(i, 2), P(i, 3)});
    json doc{{"type", "spectrum"},
             {"model", model.name()},
             {"k", k},
             {"h", r.loop.h()},
             {"ind_H", r.spectral.ind_H},
             {"nul_H", r.spectral.nul_H},
             {"ind_h", r.spectral.ind_h},
             {"nul_h", r.spectral.nul_h},
             {"gap_H", r.spectral.gap_H},
             {"gap_h", r.spectral.gap_h},
             {"tol_rank_H", r.spectral.tol_rank_H},
             {"tol_rank_h", r.spectral.tol_rank_h},
             {"monodromy", pj},
             {"monodromy_eigenvalues", complex_list(r.spectral.monodromy_eigenvalues)},
             {"iterates", table},
             {"partition", classes},
             {"meta", meta_json(c)}};
    auto js = out.open("spectrum.json");
    js << doc.dump(2) << '\n';
    log << "ind_h " << r.spectral.ind_h << ", nul_h " << r.spectral.nul_h << ", ind_H " << r.spectral.ind_H
        << ", nul_H " << r.spectral.nul_H << '\n';
    return Ok;
  } catch (const Error& e) {
    auto os = out.open("spectrum.json");
    os << error_json(e, &c).dump(2) << '\n';
    log << e.what() << '\n';
    return RuntimeFailure;
  }
}

/// Re-validates an orbit record from its stored loop and the model only.
inline json verify_orbit_json(const LagrangianModel& model, const json& j, const RunConfig& c) {
  json v{{"type", "verify"}, {"record", "orbit"}};
  if (j.at("model").get<std::string>() != model.name()) {
    v["ok"] = false;
    v["reason"] = "model mismatch";
    return v;
  }
  const double k = j.at("k").get<double>();
  const DiscreteLoop loop = loop_from_json(j.at("loop"));
  ActionOptions opts = c.action;
  if (j.contains("meta")) opts.tol_crit = j["meta"]["tolerances"].value("tol_crit", opts.tol_crit);
  try {
    const auto ev = evaluate_loop(model, k, loop, opts);
    const auto r = make_record(model, k, loop, ev, opts);
    const double s = j.at("action").get<double>();
    const bool critical = r.gradient_norm <= opts.tol_crit;
    const bool action_ok = std::abs(r.action - s) <= 1e-9 * std::max(1.0, std::abs(s));
    const bool energy_ok = r.energy_error <= 1e-6;
    const bool index_ok = r.spectral.ind_H == j.at("ind_H").get<int>() && r.spectral.nul_H == j.at("nul_H").get<int>() &&
                          r.spectral.ind_h == j.at("ind_h").get<int>() && r.spectral.nul_h == j.at("nul_h").get<int>();
    const bool min_ok = !j.at("is_local_min").get<bool>() || r.spectral.ind_H == 0;
    v["critical"] = critical;
    v["action_ok"] = action_ok;
    v["energy_ok"] = energy_ok;
    v["index_ok"] = index_ok;
    v["ok"] = critical && action_ok && energy_ok && index_ok && min_ok;
  } catch (const Error& e) {
    v["ok"] = false;
    v["reason"] = e.what();
  }
  return v;
}

/// Turns a record file into plain-text columns ready for any plotting tool: for each orbit a dense
/// trace (q1 q2) and its loop vertices, for each minimax row the action profile along the path
/// (node action). An index.json lists the files written.
inline int cmd_plot(const RunConfig& c, const std::string& path, std::ostream& log = std::cerr) {
  if (path.empty()) throw Error(ErrorKind::UsageError, "plot needs a record file");
  const OutputDir out(c.out);
  const auto model = make_model(c);
  json index = json::array();
  int orbits = 0;
  for (const auto& j : read_records(path)) {
    const std::string type = j.value("type", "");
    if (type == "orbit" || type == "minimizer") {
      const json& rec = type == "orbit" ? j : j.at("orbit");
      if (rec.at("model").get<std::string>() != model.name()) {
        throw Error(ErrorKind::ConfigError, "orbit record was computed for model " + rec.at("model").get<std::string>());
      }
      OrbitRecord r;
      r.loop = loop_from_json(rec.at("loop"));
      r.period = rec.at("period").get<double>();
      const auto& init = rec.at("initial");
      r.initial = {Vec2(init.at("q").at(0).get<double>(), init.at("q").at(1).get<double>()),
                   Vec2(init.at("v").at(0).get<double>(), init.at("v").at(1).get<double>())};
      const std::string stem = "plot_orbit_" + std::to_string(orbits++);
      write_trace(out, stem + ".trace", dense_trace(model, r, 400, c.action.shoot.flow));
      write_trace(out, stem + ".points", r.loop.points);
      index.push_back({{"kind", "orbit"},
                       {"trace", stem + ".trace"},
                       {"points", stem + ".points"},
                       {"action", rec.at("action")},
                       {"period", r.period}});
    } else if (type == "minimax") {
      const std::string name = "plot_path_" + std::to_string(j.at("n").get<int>()) + ".dat";
      auto os = out.open(name);
      os << std::setprecision(17);
      const auto actions = j.at("path_actions").get<std::vector<double>>();
      for (std::size_t i = 0; i < actions.size(); ++i) os << i << ' ' << actions[i] << '\n';
      index.push_back({{"kind", "path"}, {"file", name}, {"n", j.at("n")}, {"c", j.at("c")}});
    }
  }
  auto os = out.open("plot_index.json");
  os << json{{"type", "plot"}, {"files", index}, {"meta", meta_json(c)}}.dump(2) << '\n';
  log << index.size() << " plot file group(s) written\n";
  return index.empty() ? VerifyFailed : Ok;
}

inline int cmd_verify(const RunConfig& c, const std::string& path, std::ostream& log = std::cerr) {
  if (path.empty()) throw Error(ErrorKind::UsageError, "verify needs a record file");
  const OutputDir out(c.out);
  const auto model = make_model(c);
  auto os = out.open("verify.jsonl");
  bool ok = true;
  int checked = 0;
  for (const auto& j : read_records(path)) {
    const std::string type = j.value("type", "");
    json v;
    if (type == "orbit") v = verify_orbit_json(model, j, c);
    else if (type == "minimizer") v = verify_orbit_json(model, j.at("orbit"), c);
    else if (type == "mane") v = verify_mane_json(model, j, c);
    else continue;
    ++checked;
    ok = ok && v["ok"].get<bool>();
    os << v.dump() << '\n';
  }
  log << checked << " record(s) checked: " << (ok ? "all valid" : "INVALID record found") << '\n';
  return ok && checked > 0 ? Ok : VerifyFailed;
}

}  // namespace tonelli::cli
