#include "locex/cli.hpp"

int main(int argc, char** argv) { return locex::cli_main(argc, argv); }
