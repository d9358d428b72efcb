#include <string>
#include <vector>

#include "dskca/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dskca::run_command(args);
}
