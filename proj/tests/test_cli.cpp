#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "tonelli/cli.hpp"

using namespace tonelli;
namespace fs = std::filesystem;
namespace tc = tonelli::cli;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("tonelli_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string str(const std::string& sub = "") const { return (sub.empty() ? path_ : path_ / sub).string(); }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

tc::RunConfig gamma_config(const std::string& out, int h = 64) {
  auto c = tc::parse_config(
      "[model]\nname = counterexample\n"
      "[run]\nk = 0.25\nseed = 7\nh = " +
      std::to_string(h) +
      "\n"
      "[orbit]\nmode = reference\nreference = Gamma\nperturb = 1e-3\niterates = 4\n");
  c.out = out;
  return c;
}

tc::RunConfig kinetic_config(const std::string& out) {
  auto c = tc::parse_config(
      "[model]\nname = kinetic\n[run]\nk = 0.5\nk_grid = 0.1, 0.5\n"
      "[search]\ncenters_per_side = 2\nradii = 2\n"
      "[mane]\nfamily_size = 1\nopt_grid = 16\ncert_grid = 32\n");
  c.out = out;
  return c;
}

void expect_config_error(const std::string& text) {
  try {
    tc::parse_config(text);
    ADD_FAILURE() << "accepted: " << text;
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError) << text;
  }
}

std::vector<tc::json> lines(const std::string& path) { return tc::read_records(path); }

}  // namespace

TEST(ConfigGrammar, ParsesSectionsAndComments) {
  const auto c = tc::parse_config(
      "# leading comment\n"
      "[model]\n"
      "  name = magnetic_cell   # trailing comment\n"
      "s = 1.5\n"
      "\n"
      "[run]\n"
      "k = 0.1\n"
      "k_grid = 0.05, 0.1,0.2\n"
      "h = auto\n"
      "[orbit]\n"
      "wind = 1, -2\n");
  EXPECT_EQ(c.model.name, "magnetic_cell");
  EXPECT_EQ(c.model.s, 1.5);
  EXPECT_EQ(c.k, 0.1);
  EXPECT_EQ(c.k_grid, (std::vector<double>{0.05, 0.1, 0.2}));
  EXPECT_EQ(c.h, 0);
  EXPECT_EQ(c.wind, (std::array<int, 2>{1, -2}));
  const auto terms = tc::parse_config("[model]\nname = mechanical\npotential = 0.3 1 0 0; 0.2 1 1 0.5\n").model.potential;
  ASSERT_EQ(terms.size(), 2u);
  EXPECT_EQ(terms[1].phase, 0.5);
}

TEST(ConfigGrammar, RejectsBadInput) {
  expect_config_error("[run]\nfoo = 1\n");
  expect_config_error("[run]\nk = 0.1\nk = 0.2\n");
  expect_config_error("[model]\nname = kinetic\ns = 2\n");  // key not used by the model
  expect_config_error("[model]\nname = nonsense\n");
  expect_config_error("[run]\nk = abc\n");
  expect_config_error("[run\nk = 1\n");
  expect_config_error("[run]\nk 1\n");
  expect_config_error("[model]\nside1 = -1\n");
  expect_config_error("[orbit]\nmode = wander\n");
  expect_config_error("[run]\nh = 1\n");
}

TEST(ConfigHash, StableAndSensitive) {
  const auto a = tc::parse_config("[run]\nk = 0.3\n");
  const auto b = tc::parse_config("# same content\n[run]\n  k=0.3  \n");
  const auto d = tc::parse_config("[run]\nk = 0.31\n");
  EXPECT_EQ(tc::config_hash(a), tc::config_hash(b));
  EXPECT_NE(tc::config_hash(a), tc::config_hash(d));
  EXPECT_EQ(tc::config_hash(a).size(), 16u);
}

TEST(CmdOrbit, GammaFromPerturbedSeed) {
  TempDir dir;
  const auto c = gamma_config(dir.str("out"));
  std::ostringstream log;
  ASSERT_EQ(tc::cmd_orbit(c, log), tc::Ok) << log.str();
  const auto recs = lines(dir.str("out/orbits.jsonl"));
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0]["type"], "orbit");
  EXPECT_NEAR(recs[0]["period"].get<double>(), 2 * M_PI, 2 * M_PI * 1e-5);
  EXPECT_EQ(recs[0]["ind_h"].get<int>(), 2);
  EXPECT_TRUE(fs::exists(dir.str("out/orbit_0.trace")));
}

TEST(CmdOrbit, KineticMinimizeReportsNotFound) {
  TempDir dir;
  const auto c = kinetic_config(dir.str("out"));
  std::ostringstream log;
  EXPECT_EQ(tc::cmd_orbit(c, log), tc::Ok);
  const auto recs = lines(dir.str("out/orbits.jsonl"));
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0]["type"], "error");
  EXPECT_EQ(recs[0]["kind"], "NotFound");
}

TEST(CmdMinimax, RejectsNonPositiveNmax) {
  TempDir dir;
  auto c = kinetic_config(dir.str("out"));
  c.n_max = 0;
  try {
    tc::cmd_minimax(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UsageError);
  }
}

TEST(CmdMane, KineticAndVerify) {
  TempDir dir;
  const auto c = kinetic_config(dir.str("out"));
  std::ostringstream log;
  ASSERT_EQ(tc::cmd_mane(c, "", log), tc::Ok);
  const auto j = lines(dir.str("out/mane.json"))[0];
  EXPECT_EQ(j["e0"].get<double>(), 0.0);
  EXPECT_EQ(j["c_lower"].get<double>(), 0.0);
  EXPECT_NEAR(j["c_upper"].get<double>(), 0.0, 1e-12);
  EXPECT_TRUE(j["lower_certificate"].is_null());
  EXPECT_EQ(tc::cmd_mane(c, dir.str("out/mane.json"), log), tc::Ok);
  EXPECT_EQ(tc::cmd_verify(c, dir.str("out/mane.json"), log), tc::Ok);

  // a tampered upper value fails verification
  auto bad = j;
  bad["c_upper"] = -1.0;
  std::ofstream(dir.str("bad.json")) << bad.dump();
  EXPECT_EQ(tc::cmd_mane(c, dir.str("bad.json"), log), tc::VerifyFailed);
}

TEST(CmdSpectrum, GammaTable) {
  TempDir dir;
  const auto c = gamma_config(dir.str("out"), 32);
  std::ostringstream log;
  ASSERT_EQ(tc::cmd_spectrum(c, log), tc::Ok) << log.str();
  const auto j = lines(dir.str("out/spectrum.json"))[0];
  EXPECT_EQ(j["ind_h"].get<int>(), 2);
  EXPECT_EQ(j["nul_h"].get<int>(), 2);
  EXPECT_EQ(j["ind_H"].get<int>(), 3);
  EXPECT_EQ(j["nul_H"].get<int>(), 1);
  ASSERT_EQ(j["iterates"].size(), 4u);
  for (const auto& row : j["iterates"]) EXPECT_EQ(row["nul_h"], row["nul_monodromy"]) << row.dump();
  Mat4 P;
  for (int r = 0; r < 4; ++r)
    for (int s = 0; s < 4; ++s) P(r, s) = j["monodromy"][r][s].get<double>();
  const auto part = nullity_partition(P, 4);
  ASSERT_EQ(j["partition"].size(), part.size());
  for (std::size_t i = 0; i < part.size(); ++i) {
    EXPECT_EQ(j["partition"][i]["members"].get<std::vector<int>>(), part[i].members);
    EXPECT_EQ(j["partition"][i]["nullity"].get<int>(), part[i].nullity);
  }
  EXPECT_TRUE(fs::exists(dir.str("out/spectrum.csv")));
}

TEST(CmdSpectrum, FlatGeodesic) {
  TempDir dir;
  auto c = tc::parse_config("[run]\nk = 0.5\nh = 12\n[orbit]\nmode = geodesic\nwind = 1, 0\nperturb = 1e-4\niterates = 3\n");
  c.out = dir.str("out");
  std::ostringstream log;
  ASSERT_EQ(tc::cmd_spectrum(c, log), tc::Ok) << log.str();
  const auto j = lines(dir.str("out/spectrum.json"))[0];
  EXPECT_EQ(j["ind_h"].get<int>(), 0);
  EXPECT_EQ(j["nul_h"].get<int>(), 2);
  for (const auto& row : j["iterates"]) EXPECT_EQ(row["nul_h"], row["nul_monodromy"]) << row.dump();
}

TEST(CmdVerifyAndPlot, RoundTrip) {
  TempDir dir;
  const auto c = gamma_config(dir.str("out"), 48);
  std::ostringstream log;
  ASSERT_EQ(tc::cmd_orbit(c, log), tc::Ok);
  const std::string rec = dir.str("out/orbits.jsonl");
  auto v = c;
  v.out = dir.str("verify");
  EXPECT_EQ(tc::cmd_verify(v, rec, log), tc::Ok) << log.str();

  auto j = lines(rec)[0];
  j["action"] = j["action"].get<double>() + 1e-3;
  std::ofstream(dir.str("tampered.jsonl")) << j.dump() << '\n';
  EXPECT_EQ(tc::cmd_verify(v, dir.str("tampered.jsonl"), log), tc::VerifyFailed);
  EXPECT_THROW(tc::cmd_verify(v, "", log), Error);

  auto p = c;
  p.out = dir.str("plot");
  ASSERT_EQ(tc::cmd_plot(p, rec, log), tc::Ok);
  const auto idx = lines(dir.str("plot/plot_index.json"))[0];
  ASSERT_EQ(idx["files"].size(), 1u);
  std::istringstream trace(slurp(dir.str("plot/plot_orbit_0.trace")));
  int rows = 0;
  for (std::string line; std::getline(trace, line); ++rows) {
    std::istringstream ls(line);
    double x, y, z;
    EXPECT_TRUE(static_cast<bool>(ls >> x >> y)) << line;
    EXPECT_FALSE(static_cast<bool>(ls >> z)) << line;
  }
  EXPECT_GE(rows, 100);
  EXPECT_EQ(idx["meta"]["config_hash"], tc::config_hash(p));

  auto other = kinetic_config(dir.str("plot2"));
  EXPECT_THROW(tc::cmd_plot(other, rec, log), Error);  // model mismatch
}

TEST(Determinism, ByteIdenticalReruns) {
  TempDir dir;
  std::ostringstream log;
  auto a = gamma_config(dir.str("a"), 32);
  auto b = gamma_config(dir.str("b"), 32);
  ASSERT_EQ(tc::cmd_orbit(a, log), tc::Ok);
  ASSERT_EQ(tc::cmd_orbit(b, log), tc::Ok);
  EXPECT_EQ(slurp(dir.str("a/orbits.jsonl")), slurp(dir.str("b/orbits.jsonl")));
  EXPECT_EQ(slurp(dir.str("a/orbit_0.trace")), slurp(dir.str("b/orbit_0.trace")));

  // a different seed perturbs differently, hence a different record
  auto d = gamma_config(dir.str("d"), 32);
  d.seed = 8;
  ASSERT_EQ(tc::cmd_orbit(d, log), tc::Ok);
  EXPECT_NE(slurp(dir.str("a/orbits.jsonl")), slurp(dir.str("d/orbits.jsonl")));
}

TEST(Records, EmbedMeta) {
  TempDir dir;
  std::ostringstream log;
  const auto c = gamma_config(dir.str("out"), 32);
  ASSERT_EQ(tc::cmd_orbit(c, log), tc::Ok);
  ASSERT_EQ(tc::cmd_spectrum(c, log), tc::Ok);
  for (const auto& path : {dir.str("out/orbits.jsonl"), dir.str("out/spectrum.json")}) {
    for (const auto& j : lines(path)) {
      ASSERT_TRUE(j.contains("meta")) << path;
      EXPECT_EQ(j["meta"]["config_hash"], tc::config_hash(c));
      EXPECT_EQ(j["meta"]["seed"], 7);
      EXPECT_EQ(j["meta"]["version"], tc::kVersion);
      EXPECT_TRUE(j["meta"]["tolerances"].contains("tol_crit"));
    }
  }
}

TEST(Records, LoopJsonRoundTrip) {
  const auto loop = flat_geodesic_loop(TorusConfig(1, 1), {1, 2}, 0.4, 9);
  const auto back = tc::loop_from_json(tc::loop_json(loop));
  EXPECT_EQ(back.tau, loop.tau);
  EXPECT_EQ(back.points, loop.points);
}
