#include "rlmatch/cli.hpp"

int main(int argc, char** argv) { return rlmatch::cli::main(argc, argv); }
