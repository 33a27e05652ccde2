#include "savipp/harness/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>

#include "savipp/scenegen/dataset.hpp"

namespace savipp::harness {

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"savipp: desk-scale object-centric video pipeline"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "generate a procedural video dataset");
  scenegen::DatasetConfig gc;
  std::string regime = "c", out;
  gen->add_option("--regime", regime, "scene regime: c, d or e");
  gen->add_option("--videos", gc.videos, "training videos");
  gen->add_option("--out", out, "output directory")->required();
  gen->callback([&] {
    gc.regime = scenegen::regime_from_name(regime);
    gc.out = out;
    scenegen::generate_dataset(gc);
  });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace savipp::harness
