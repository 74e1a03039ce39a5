#include <iostream>

#include "ulw/cli.hpp"

int main(int argc, char** argv) { return ulw::cli::run(argc, argv, std::cout, std::cerr); }
