#include "edtf/cli.hpp"

int main(int argc, char ** argv) {
    return edtf::cli_run(argc, argv);
}
