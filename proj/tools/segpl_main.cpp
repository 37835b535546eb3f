#include <iostream>
#include <string>
#include <vector>

#include "segpl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return segpl::run_cli(args, std::cout, std::cerr);
}
