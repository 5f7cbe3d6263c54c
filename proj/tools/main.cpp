#include <string>
#include <vector>

#include "silora/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return silora::run_cli(args);
}
