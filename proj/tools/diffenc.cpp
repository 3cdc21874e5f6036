#include "diffenc/cli.hpp"

int main(int argc, char** argv) { return diffenc::cli::run(argc, argv); }
