#include <iostream>

#include "xmodal/cli.hpp"

int main(int argc, char** argv) {
  return xmodal::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
