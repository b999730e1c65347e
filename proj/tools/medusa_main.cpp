#include <iostream>

#include "medusa/cli.hpp"

int main(int argc, char** argv) { return medusa::run_cli(argc, argv, std::cout, std::cerr); }
