#include <iostream>
#include <string>
#include <vector>

#include "threatlens/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return threatlens::run_cli(args, std::cin, std::cout, std::cerr);
}
