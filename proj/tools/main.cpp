#include <vector>

#include "gridpipe/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return gridpipe::run_cli(args);
}
