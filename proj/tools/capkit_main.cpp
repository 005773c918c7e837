#include <iostream>
#include <string>
#include <vector>

#include "capkit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return capkit::run_command(args, std::cout, std::cerr);
}
