#include "ovsim/cli.hpp"

int main(int argc, char** argv) { return ovsim::cli_main(argc, argv); }
