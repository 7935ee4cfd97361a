#include <iostream>

#include "foldnet/cli.hpp"

int main(int argc, char** argv) {
  return foldnet::cli::run(argc, argv, std::cout, std::cerr);
}
