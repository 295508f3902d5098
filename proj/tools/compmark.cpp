#include <iostream>

#include "compmark/cli.hpp"

int main(int argc, char** argv) { return compmark::cli::run(argc, argv, std::cout, std::cerr); }
