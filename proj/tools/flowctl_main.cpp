#include "flowctl/runconfig.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return flowctl::run_cli(args);
}
