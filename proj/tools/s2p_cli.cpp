#include <string>
#include <vector>

#include "s2p/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return s2p::cli::run(std::move(args));
}
