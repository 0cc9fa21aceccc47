#include <iostream>

#include "msseg/cli.hpp"

int main(int argc, char** argv) {
  return msseg::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
