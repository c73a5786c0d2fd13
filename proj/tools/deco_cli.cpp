#include <iostream>
#include <string>
#include <vector>

#include "deco/cli.hpp"

int main(int argc, char** argv) {
  deco::cli::tune_allocator();
  return deco::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
