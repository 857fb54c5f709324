#include "maskdiff/cli.hpp"

int main(int argc, char** argv) { return maskdiff::cli::run(argc, argv); }
