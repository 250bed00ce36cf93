#include "gpex/cli.hpp"

int main(int argc, char** argv) { return gpex::cli_main(argc, argv); }
