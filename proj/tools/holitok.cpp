#include "holitok/cli.hpp"

int main(int argc, char** argv) { return holitok::cli::run(argc, argv); }
