#include <vector>

#include "mpref/orchestrator.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mpref::pipeline::run_cli(args);
}
