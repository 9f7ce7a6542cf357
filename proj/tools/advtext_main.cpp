#include "advtext/cli.hpp"

int main(int argc, char** argv) { return advtext::cli::run(argc, argv); }
