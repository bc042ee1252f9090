#include "lgloc/cli.hpp"

int main(int argc, char** argv) { return lgloc::run_command(argc, argv); }
