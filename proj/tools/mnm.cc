#include <iostream>
#include <string>
#include <vector>

#include "mnm/cli/cli.h"

int main(int argc, char** argv) {
  return mnm::cli::Run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
