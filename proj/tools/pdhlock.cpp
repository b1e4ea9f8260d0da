#include <iostream>
#include <string>
#include <vector>

#include "pdhlock/shell.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pdhlock::shell::run_cli(args, std::cout, std::cerr);
}
