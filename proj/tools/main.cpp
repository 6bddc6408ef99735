#include "maestro/cli.hpp"

int main(int argc, char** argv) { return maestro::cli::cli_main(argc, argv); }
