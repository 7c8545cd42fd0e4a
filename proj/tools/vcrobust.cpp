#include <string>
#include <vector>

#include "vcrobust/cli.hpp"

int main(int argc, char** argv) {
  return vcrobust::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
