#include <string>
#include <vector>

#include "fedsplit/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return fedsplit::cli::dispatch(args);
}
