#include <iostream>

#include "unisal/cli.hpp"

int main(int argc, char** argv) { return unisal::run_cli(argc, argv, std::cout, std::cerr); }
