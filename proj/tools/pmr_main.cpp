#include <iostream>

#include "pmr/cli.hpp"

int main(int argc, char** argv) {
    return pmr::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
