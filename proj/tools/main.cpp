#include <iostream>

#include "orbitedit/cli.hpp"

int main(int argc, char** argv) {
    return orbitedit::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
