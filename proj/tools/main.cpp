#include <string>
#include <vector>

#include "fbwc/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return fbwc::run_cli(args);
}
