#include "cli.hpp"

int main(int argc, char** argv) { return acs::cli::main(argc, argv); }
