#include <iostream>

#include "mfals/cli.hpp"

int main(int argc, char** argv) {
    return mfals::cli::run(argc, argv, std::cout, std::cerr);
}
