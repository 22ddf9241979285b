#include <iostream>
#include <string>
#include <vector>

#include "refuel/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return refuel::cli::run(args, std::cout, std::cerr);
}
