#include "folio/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return folio::cli::run(argc, argv, std::cout, std::cerr); }
