#include <string>
#include <vector>

#include "stiffkin/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return stiffkin::run_cli(args);
}
