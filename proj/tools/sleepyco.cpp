#include <string>
#include <vector>

#include "sleepyco/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return sleepyco::cli::run(args);
}
