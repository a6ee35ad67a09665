#include <iostream>

#include "tinysense/cli/cli.hpp"

int main(int argc, char** argv) { return tinysense::cli::run_cli(argc, argv, std::cout, std::cerr); }
