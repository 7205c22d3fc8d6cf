#include <iostream>

#include "mmpkd/cli.hpp"

int main(int argc, char** argv) { return mmpkd::cli::run(argc, argv, std::cout, std::cerr); }
