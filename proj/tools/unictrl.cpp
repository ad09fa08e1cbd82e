#include "unictrl/cli.hpp"

int main(int argc, char** argv) { return unictrl::cli_main(argc, argv); }
