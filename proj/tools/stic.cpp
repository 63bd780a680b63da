#include "stic/cli.hpp"

int main(int argc, char** argv) { return stic::run_cli(argc, argv); }
