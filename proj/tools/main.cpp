#include <iostream>

#include "robustmal/cli.hpp"

int main(int argc, char** argv) { return robustmal::run_cli(argc, argv, std::cout, std::cerr); }
