#include "mmreg/cli.h"

int main(int argc, char** argv) { return mmreg::cli_main(argc, argv); }
