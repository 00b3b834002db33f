#include "sot/cli.hpp"

int main(int argc, char** argv) { return sot::run_cli(argc, argv); }
