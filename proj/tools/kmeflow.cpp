#include "cli.hpp"

int main(int argc, char** argv) { return kmeflow::cli::run(argc, argv); }
