// Runs every stage on the "tiny" synthetic profile in a scratch directory and
// prints the resulting report.

#include <cstdio>

#include "posdec/posdec.hpp"

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "posdec_demo";
  posdec::PipelineConfig config;
  config.profile = "tiny";
  config.data_dir = (root / "data").string();
  config.output_dir = (root / "out").string();
  config.n_trees = 60;
  config.threads = 0;
  config.svg = false;
  try {
    posdec::run_all(config);
    std::fputs(posdec::io::read_text(root / "out" / "report.txt").c_str(), stdout);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "demo failed: %s\n", e.what());
    return 1;
  }
  return 0;
}
