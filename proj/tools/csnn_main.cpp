#include <iostream>

#include "csnn/cli.hpp"

int main(int argc, char** argv) { return csnn::cli::run(argc, argv, std::cout, std::cerr); }
