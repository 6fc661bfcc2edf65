#include "xmatch/cli.hpp"

int main(int argc, char** argv) { return xmatch::run_cli(argc, argv); }
