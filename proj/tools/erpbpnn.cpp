#include <iostream>
#include <string>
#include <vector>

#include "erpbpnn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return erpbpnn::cli::run(args, std::cout, std::cerr);
}
