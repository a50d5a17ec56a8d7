#include <lfsr/cli.hpp>

#include <iostream>

int main(int argc, char** argv) { return lfsr::cli::run(argc, argv, std::cout, std::cerr); }
