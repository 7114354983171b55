#include <iostream>
#include <string>
#include <vector>

#include "cli_app.hpp"

int main(int argc, char** argv) {
  return clutter4d::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
