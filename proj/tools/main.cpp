#include "fff/cli.hpp"

int main(int argc, char** argv) { return fff::cli::main(argc, argv); }
