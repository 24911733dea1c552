#include <spr/cli.hpp>

int main(int argc, char** argv) {
    return spr::cli_dispatch(argc, argv);
}
