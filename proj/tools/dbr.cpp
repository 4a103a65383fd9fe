#include <iostream>

#include "dbr/cli/cli.hpp"

int main(int argc, char** argv) {
  return dbr::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
