#include <iostream>

#include "mixclass_cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mixclass::cli::run(args, std::cout, std::cerr);
}
