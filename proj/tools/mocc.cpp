#include "mocc/cli.hpp"

int main(int argc, char **argv) { return mocc::cli::run(argc, argv); }
