#include <iostream>
#include <string>
#include <vector>

#include "cqcim/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return cqcim::cli::run(args, std::cout, std::cerr);
}
