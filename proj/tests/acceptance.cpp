// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit status if any criterion fails.

#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "oracles.hpp"
#include "tonelli/cli.hpp"

using namespace tonelli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const CounterexampleParams kParams{};
constexpr double kOscK = 0.25;
constexpr double kCellS = 2.0;
constexpr double kCellK = 0.1;

struct MagneticRun {
  std::optional<OrbitRecord> minimizer;
  std::optional<ScanResult> scan;
  std::vector<OrbitRecord> critical;  ///< every negative-action critical point found
};

MagneticRun g_magnetic;
std::vector<std::pair<std::string, OrbitRecord>> g_oscillator;  ///< descended Gamma and Psi

DiscreteLoop perturb(const TorusConfig& t, DiscreteLoop loop, std::uint64_t seed, double rel) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& p : loop.points) p = t.wrap(p + rel * t.min_side() * Vec2(u(rng), u(rng)));
  loop.tau *= 1.0 + rel * u(rng);
  return loop;
}

// 1 -------------------------------------------------------------------------
void criterion1(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = counterexample_model(kParams);
  const auto orbits = reference_orbits(kParams, kOscK);
  const double periods[2] = {2 * M_PI, 2 * M_PI * std::sqrt(2.0)};
  DescendOptions d;
  d.mode = DescentMode::Critical;
  for (int i = 0; i < 2; ++i) {
    const auto seed = perturb(model.torus(), reference_loop(orbits[i], 64), 100 + i, 1e-3);
    const auto r = descend(model, kOscK, seed, d);
    const double rel = std::abs(r.period - periods[i]) / periods[i];
    o.detail << orbits[i].name << " period rel err " << rel << ", |E-k| " << r.energy_error << "; ";
    o.check(rel <= 1e-5, orbits[i].name + " period");
    o.check(r.energy_error <= 1e-6, orbits[i].name + " energy");
    g_oscillator.emplace_back(orbits[i].name, r);
  }
  const double s = seconds_since(t0);
  o.detail << "runtime " << s << " s";
  o.check(s < 60.0, "runtime");
}

// 2 -------------------------------------------------------------------------
void criterion2(Outcome& o) {
  const auto model = counterexample_model(kParams);
  const auto orbits = reference_orbits(kParams, kOscK);
  const auto expected = maslov_indices(kParams);
  for (int i = 0; i < 2; ++i) {
    const auto rep = discrete_hessian(model, kOscK, reference_loop(orbits[i], 64));
    o.detail << orbits[i].name << " ind_h " << rep.ind_h << " (formula " << expected[i] << "); ";
    o.check(rep.ind_h == expected[i], orbits[i].name + " index");
    o.check(rep.ind_h > 0, orbits[i].name + " not a local minimum");
  }
  o.check(expected[0] == 2 && expected[1] == 4, "formula values");
}

// 3 and 4 share the iterate spectra -----------------------------------------
struct IterateRow {
  int ind_H, nul_H, ind_h, nul_h, nul_P;
};

struct IterateCase {
  std::string name;
  LagrangianModel model;
  double k;
  DiscreteLoop loop;
  Mat4 monodromy;
  std::vector<IterateRow> rows;  ///< m = 1..8
};

std::vector<IterateCase> g_iterates;

void compute_iterates() {
  if (!g_iterates.empty()) return;
  const auto model = counterexample_model(kParams);
  const auto orbits = reference_orbits(kParams, kOscK);
  g_iterates.push_back({"Gamma", model, kOscK, reference_loop(orbits[0], 32), {}, {}});
  g_iterates.push_back({"Psi", model, kOscK, reference_loop(orbits[1], 32), {}, {}});
  g_iterates.push_back(
      {"flat geodesic", kinetic_model(), 0.5, flat_geodesic_loop(TorusConfig(1, 1), {1, 1}, 0.5, 12), {}, {}});
  for (auto& c : g_iterates) {
    const auto base = discrete_hessian(c.model, c.k, c.loop);
    c.monodromy = base.monodromy;
    for (int m = 1; m <= 8; ++m) {
      const auto lm = iterate(c.loop, m);
      const auto rep = spectral_report(c.model, c.k, lm, evaluate_loop(c.model, c.k, lm), {}, false);
      c.rows.push_back({rep.ind_H, rep.nul_H, rep.ind_h, rep.nul_h, nullity_via_monodromy(c.monodromy, m)});
    }
  }
}

void criterion3(Outcome& o) {
  compute_iterates();
  for (const auto& c : g_iterates) {
    o.detail << c.name << " nul_h:";
    for (std::size_t m = 0; m < c.rows.size(); ++m) {
      o.detail << ' ' << c.rows[m].nul_h << '/' << c.rows[m].nul_P;
      o.check(c.rows[m].nul_h == c.rows[m].nul_P, c.name + " m=" + std::to_string(m + 1));
    }
    o.detail << "; ";
  }
}

void criterion4(Outcome& o) {
  compute_iterates();
  for (const auto& c : g_iterates) {
    std::optional<int> gap;
    bool nul_ok = true;
    for (const auto& r : c.rows) {
      const int g = r.nul_H - r.nul_h;
      nul_ok = nul_ok && g >= -1 && g <= 1 && (!gap || *gap == g);
      gap = g;
    }
    o.check(nul_ok, c.name + " nullity gap");
    bool ind_ok = true;
    for (const auto& cl : nullity_partition(c.monodromy, 8)) {
      const auto& first = c.rows[cl.members.front() - 1];
      for (int m : cl.members) {
        const auto& r = c.rows[m - 1];
        ind_ok = ind_ok && (r.ind_H - r.ind_h) == (first.ind_H - first.ind_h);
      }
    }
    o.check(ind_ok, c.name + " index gap on classes");
    o.detail << c.name << " nul gap " << *gap << ", ind_h:";
    for (const auto& r : c.rows) o.detail << ' ' << r.ind_h;
    if (c.name != "flat geodesic") {
      const auto floor = index_growth_floor(c.model, c.k, c.loop, {}, 8);
      o.detail << " (m0 " << floor.m0 << ", m1 " << floor.m1 << ")";
      o.check(floor.m0 > 0, c.name + " negative direction");
      for (int m = 1; m <= 8; ++m) o.check(c.rows[m - 1].ind_h >= floor(m), c.name + " growth m=" + std::to_string(m));
    }
    o.detail << "; ";
  }
}

// 5 -------------------------------------------------------------------------
void criterion5(Outcome& o) {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  int loops = 0;
  for (const auto& model : oracle::fixture_models()) {
    const double k = std::max(0.3, e0(model) + 0.3);
    int done = 0;
    for (int trial = 0; trial < 400 && done < 100; ++trial) {
      const auto loop = oracle::random_loop(model, rng, 6);
      if (!loop_in_domain(model.torus(), loop, {})) continue;
      Eigen::VectorXd g;
      try {
        g = discrete_gradient(model, k, loop).differential();
      } catch (const Error&) {
        continue;
      }
      const auto f = oracle::fd_gradient(model, k, loop);
      const double rel = (g - f).norm() / std::max(1.0, f.norm());
      worst = std::max(worst, rel);
      ++done;
    }
    o.check(done == 100, model.name() + " only " + std::to_string(done) + " valid loops");
    loops += done;
  }
  o.detail << loops << " loops, worst gradient rel err " << worst << "; ";
  o.check(worst <= 1e-6, "gradient");

  // Hessians at every critical point found by the other criteria
  std::vector<std::tuple<std::string, LagrangianModel, double, DiscreteLoop>> pts;
  for (const auto& [name, r] : g_oscillator) pts.emplace_back(name, counterexample_model(kParams), kOscK, r.loop);
  for (const auto& r : g_magnetic.critical) pts.emplace_back("magnetic", magnetic_cell_fixture(kCellS), kCellK, r.loop);
  pts.emplace_back("flat geodesic", kinetic_model(), 0.5, flat_geodesic_loop(TorusConfig(1, 1), {1, 1}, 0.5, 12));
  double hworst = 0.0;
  for (const auto& [name, model, k, loop] : pts) {
    const auto ev = evaluate_loop(model, k, loop);
    Eigen::MatrixXd H = hessian_matrix(model, k, loop, ev);
    const Eigen::MatrixXd F = oracle::fd_hessian(model, k, loop);
    const double rel = (H - F).cwiseAbs().maxCoeff() / std::max(1.0, F.cwiseAbs().maxCoeff());
    hworst = std::max(hworst, rel);
    o.check(rel <= 1e-4, name + " Hessian");
  }
  o.detail << pts.size() << " critical points, worst Hessian rel err " << hworst;
}

// 6 -------------------------------------------------------------------------
void criterion6(Outcome& o) {
  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (const auto& model : oracle::fixture_models()) {
    const double k = std::max(0.3, e0(model) + 0.3);
    for (int trial = 0; trial < 5; ++trial) {
      const auto loop = oracle::random_loop(model, rng, 7);
      const auto g1 = discrete_gradient(model, k, loop);
      for (int m : {2, 3, 5}) {
        const auto gm = discrete_gradient(model, k, iterate(loop, m));
        for (std::size_t i = 0; i < gm.w.size(); ++i) {
          worst = std::max(worst, (gm.w[i] - g1.w[i % g1.w.size()]).norm());
        }
        worst = std::max(worst, std::abs(gm.mu - g1.mu));
      }
    }
  }
  o.detail << "max deviation " << worst;
  o.check(worst <= 1e-10, "equivariance");
}

// 7 -------------------------------------------------------------------------
void criterion7(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = magnetic_cell_fixture(kCellS);
  const double e = e0(model);
  LowerOptions lo;
  const auto lower = c_lower_bound(model, {0.05, kCellK, 0.2, 0.3}, lo);
  const bool certified = lower.certificate && verify_lower_certificate(model, *lower.certificate);
  o.detail << "e0 " << e << ", c_lower " << lower.value << ", k " << kCellK << "; ";
  o.check(certified, "lower certificate");
  o.check(e < kCellK && kCellK < lower.value, "k inside (e0, c_lower)");
  const auto r = find_local_minimizer(model, kCellK);
  const int crossings = self_intersections(model.torus(), r.loop);
  o.detail << "S " << r.action << ", ind_H " << r.spectral.ind_H << ", crossings " << crossings << ", period "
           << r.period << "; ";
  o.check(r.action < 0.0, "negative action");
  o.check(r.spectral.ind_H == 0, "ind_H = 0");
  o.check(crossings == 0, "simple polygon");
  g_magnetic.minimizer = r;
  g_magnetic.critical.push_back(r);
  const double s = seconds_since(t0);
  o.detail << "runtime " << s << " s";
  o.check(s < 300.0, "runtime");
}

// 8 -------------------------------------------------------------------------
void criterion8(Outcome& o) {
  if (!g_magnetic.minimizer) throw std::runtime_error("criterion 7 produced no minimizer");
  const auto model = magnetic_cell_fixture(kCellS);
  const auto scan = multiplicity_scan(model, kCellK, 3, *g_magnetic.minimizer);
  g_magnetic.scan = scan;
  o.detail << "c(n):";
  for (const auto& m : scan.minimax) o.detail << ' ' << m.value;
  o.detail << "; distinct negative orbits " << scan.orbits.size();
  for (std::size_t i = 1; i < scan.minimax.size(); ++i) {
    o.check(scan.minimax[i].value < scan.minimax[i - 1].value, "c strictly decreasing");
  }
  o.check(scan.minimax.size() == 3, "three minimax values");
  o.check(scan.orbits.size() >= 2, "at least two distinct orbits");
  for (const auto& r : scan.orbits) {
    o.check(r.action < 0.0, "negative action");
    g_magnetic.critical.push_back(r);
  }
}

// 9 -------------------------------------------------------------------------
void criterion9(Outcome& o) {
  const auto model = magnetic_cell_fixture(kCellS);
  const double tv = dtheta_total_variation(model);
  o.detail << "int|dtheta| " << tv << " (exact " << 16 * kCellS << "); ";
  o.check(std::abs(tv - 16 * kCellS) <= 1e-3, "quadrature");
  const auto& all = g_magnetic.critical;
  o.check(!all.empty(), "orbits available");
  for (const auto& r : all) {
    if (!(r.action < 0.0)) continue;
    const double pb = period_bound(model, kCellK, r.action);
    const double lb = length_bound(model, kCellK, r.action);
    o.detail << "T " << r.period << " <= " << pb << ", L " << r.length << " <= " << lb << "; ";
    o.check(r.period <= pb, "period bound");
    o.check(r.length <= lb, "length bound");
  }
}

// 10 ------------------------------------------------------------------------
void criterion10(Outcome& o) {
  const double e_osc = e0(counterexample_model(kParams));
  const double exact = 0.5 * (kParams.R / kParams.r1 + kParams.R / kParams.r2);
  const double e_mech = e0(oracle::mechanical_fixture());
  o.detail << "e0 oscillator " << e_osc << " (exact " << exact << "), mechanical " << e_mech << " (max V 0.5); ";
  o.check(std::abs(e_osc - exact) <= 1e-8, "oscillator e0");
  o.check(std::abs(e_mech - 0.5) <= 1e-8, "mechanical e0");
  struct Case {
    LagrangianModel model;
    std::vector<double> grid;
  };
  std::vector<Case> cases{{kinetic_model(), {0.1, 0.5}},
                          {oracle::mechanical_fixture(), {0.6, 0.8}},
                          {magnetic_cell_fixture(kCellS), {0.05, 0.1, 0.2, 0.3}},
                          {counterexample_model(kParams), {exact + 0.1, exact + 0.3}}};
  for (const auto& c : cases) {
    const auto m = mane_estimate(c.model, c.grid);
    const auto chk = verify_estimate(c.model, m);
    o.detail << c.model.name() << " [" << m.e0 << ", " << m.c_lower << ", " << m.c_upper << "]; ";
    o.check(chk.sandwich_ok && chk.upper_ok && chk.lower_ok, c.model.name() + " sandwich");
  }
}

// 11 ------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion11(Outcome& o) {
  const fs::path root = fs::temp_directory_path() / ("tonelli_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  struct Run {
    std::string name, config, command;
  };
  const std::vector<Run> runs{
      {"orbit",
       "[model]\nname = counterexample\n[run]\nk = 0.25\nh = 64\nseed = 11\n[orbit]\nmode = reference\n"
       "reference = Gamma\nperturb = 1e-3\n",
       "orbit"},
      {"spectrum",
       "[model]\nname = counterexample\n[run]\nk = 0.25\nh = 32\nseed = 3\n[orbit]\nmode = reference\n"
       "reference = Psi\nperturb = 5e-4\niterates = 3\n",
       "spectrum"},
      {"mane", "[model]\nname = kinetic\n[run]\nk = 0.5\nk_grid = 0.1, 0.5\n[mane]\nfamily_size = 1\n", "mane"},
  };
  for (const auto& r : runs) {
    const fs::path cfg = root / (r.name + ".cfg");
    std::ofstream(cfg) << r.config;
    std::vector<std::map<std::string, std::string>> outputs;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = root / (r.name + "_" + std::to_string(rep));
      const std::string cmd = std::string("\"") + TONELLI_CLI_PATH + "\" " + r.command + " --config \"" +
                              cfg.string() + "\" --out \"" + out.string() + "\" > /dev/null 2>&1";
      const int status = std::system(cmd.c_str());
      o.check(status == 0, r.name + " exit status");
      std::map<std::string, std::string> files;
      if (fs::exists(out)) {
        for (const auto& f : fs::directory_iterator(out)) files[f.path().filename().string()] = slurp(f.path());
      }
      outputs.push_back(std::move(files));
    }
    o.check(!outputs[0].empty(), r.name + " wrote records");
    o.check(outputs[0] == outputs[1], r.name + " byte-identical");
    o.detail << r.name << ": " << outputs[0].size() << " file(s) " << (outputs[0] == outputs[1] ? "identical" : "DIFFER")
             << "; ";
  }
  fs::remove_all(root);
}

}  // namespace

int main() {
  const std::vector<std::function<void(Outcome&)>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                            criterion5, criterion6, criterion7, criterion8,
                                                            criterion9, criterion10, criterion11};
  // 7 and 8 produce the critical points that 5 and 9 audit, so they run first.
  const std::vector<int> order{1, 2, 3, 4, 7, 8, 5, 6, 9, 10, 11};
  std::map<int, std::string> lines;
  bool all = true;
  for (int n : order) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[n - 1](o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "]";
    }
    all = all && o.pass;
    std::ostringstream line;
    line << "Criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " (" << seconds_since(t0) << " s) "
         << o.detail.str();
    lines[n] = line.str();
    std::cerr << "[done] " << lines[n] << std::endl;
  }
  for (const auto& [n, line] : lines) std::cout << line << '\n';
  return all ? 0 : 1;
}
