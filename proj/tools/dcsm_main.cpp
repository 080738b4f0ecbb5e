#include "dcsm/cli.hpp"

int main(int argc, char** argv) { return dcsm::run_cli(argc, argv); }
