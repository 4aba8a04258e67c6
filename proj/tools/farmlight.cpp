#include <iostream>

#include "farmlight/cli.h"

int main(int argc, char** argv) { return farmlight::cli::run(argc, argv, std::cout, std::cerr); }
