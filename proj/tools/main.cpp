#include "geolat/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return geolat::cli_main(argc, argv, std::cout, std::cerr); }
