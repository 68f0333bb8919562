#include <CLI11.hpp>
#include <iostream>

#include "tonelli/cli.hpp"

int main(int argc, char** argv) {
  namespace tc = tonelli::cli;
  CLI::App app{"Periodic orbits of Tonelli Lagrangians on the flat 2-torus"};
  app.set_help_flag("--help", "print this help message and exit");
  app.set_version_flag("--version", tc::kVersion);

  std::string config_path, out_dir, verify_path;
  std::optional<double> k;
  std::optional<int> h;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "configuration file (key = value with [sections])")->required();
  app.add_option("--k", k, "energy level, overrides run.k");
  app.add_option("--h", h, "number of loop points, overrides run.h");
  app.add_option("--seed", seed, "RNG seed, overrides run.seed");
  app.add_option("--out", out_dir, "output directory, overrides run.out");

  auto* orbit = app.add_subcommand("orbit", "find or polish a periodic orbit")->fallthrough();
  auto* minimax = app.add_subcommand("minimax", "mountain-pass values c(n, k) and multiplicity scan")->fallthrough();
  auto* mane = app.add_subcommand("mane", "e0 and bounds for the critical value")->fallthrough();
  mane->add_option("--verify", verify_path, "re-validate the certificates of a stored estimate");
  auto* spectrum = app.add_subcommand("spectrum", "index, nullity and iterate table of an orbit")->fallthrough();
  std::string orbit_file;
  spectrum->add_option("orbit_file", orbit_file, "orbit record file (JSON lines)");
  auto* verify = app.add_subcommand("verify", "re-validate stored records")->fallthrough();
  std::string record_file;
  verify->add_option("records", record_file, "record file (JSON or JSON lines)")->required();
  auto* plot = app.add_subcommand("plot", "write plain-text plot columns for stored records")->fallthrough();
  std::string plot_file;
  plot->add_option("records", plot_file, "record file (JSON or JSON lines)")->required();
  app.require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : tc::Usage;
  }

  try {
    tc::RunConfig cfg = tc::load_config(config_path);
    if (k) cfg.k = *k;
    if (h) {
      if (*h < 2) throw tonelli::Error(tonelli::ErrorKind::UsageError, "--h must be >= 2");
      cfg.h = *h;
    }
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    if (!orbit_file.empty()) cfg.input = orbit_file;

    if (*orbit) return tc::cmd_orbit(cfg);
    if (*minimax) return tc::cmd_minimax(cfg);
    if (*mane) return tc::cmd_mane(cfg, verify_path);
    if (*spectrum) return tc::cmd_spectrum(cfg);
    if (*plot) return tc::cmd_plot(cfg, plot_file);
    return tc::cmd_verify(cfg, record_file);
  } catch (const tonelli::Error& e) {
    std::cerr << tc::error_json(e, nullptr).dump() << '\n';
    const bool usage = e.kind() == tonelli::ErrorKind::ConfigError || e.kind() == tonelli::ErrorKind::UsageError ||
                       e.kind() == tonelli::ErrorKind::InvalidArgument;
    return usage ? tc::Usage : tc::RuntimeFailure;
  }
}
