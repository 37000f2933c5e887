#include <iostream>

#include "dsvton/commands.hpp"

int main(int argc, char** argv) { return dsvton::run_cli(argc, argv, std::cout, std::cerr); }
