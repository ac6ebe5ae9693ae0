#include "drbayes/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return drbayes::run_cli(argc, argv, std::cout, std::cerr); }
