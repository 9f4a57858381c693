#include "nvsd/cli.hpp"

int main(int argc, char** argv) { return nvsd::cli_main(argc, argv); }
