#include <iostream>

#include "scalar/cli/commands.hpp"

int main(int argc, char** argv) {
  return scalar::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
