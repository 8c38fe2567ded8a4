#include <iostream>
#include <string>
#include <vector>

#include "fusecap/cli.hpp"

int main(int argc, char** argv) {
  return fusecap::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
