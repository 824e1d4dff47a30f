#include <string>
#include <vector>

#include "f2l/cli.hpp"

int main(int argc, char** argv) {
  return f2l::run_cli(std::vector<std::string>(argv, argv + argc));
}
