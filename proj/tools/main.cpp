#include <iostream>
#include <string>
#include <vector>

#include "estnma/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return estnma::run_cli(args, std::cout, std::cerr);
}
