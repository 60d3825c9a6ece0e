#include <iostream>

#include "promptopt/cli.hpp"

int main(int argc, char** argv) { return promptopt::run_cli(argc, argv, std::cout, std::cerr); }
