#include "ldaprune/cli.hpp"

int main(int argc, char** argv) { return ldaprune::cli::run(argc, argv); }
