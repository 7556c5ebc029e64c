#include <iostream>

#include "sudormrf/cli.hpp"

int main(int argc, char** argv) { return sudormrf::cli_dispatch(argc, argv, std::cout, std::cerr); }
