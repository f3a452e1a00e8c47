#include <iostream>

#include "chmm/cli.hpp"

int main(int argc, char** argv) { return chmm::run_cli(argc, argv, std::cout, std::cerr); }
