#include "savipp/harness/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return savipp::harness::run_cli(args);
}
