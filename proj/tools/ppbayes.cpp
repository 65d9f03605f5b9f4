#include <iostream>

#include "ppbayes/cli.hpp"

int main(int argc, char** argv) { return ppbayes::cli::run(argc, argv, std::cout, std::cerr); }
