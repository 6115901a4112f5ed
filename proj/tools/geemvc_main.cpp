#include "geemvc/cli.hpp"

int main(int argc, char** argv) { return geemvc::cli_main(argc, argv); }
