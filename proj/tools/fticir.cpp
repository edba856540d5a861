#include "fticir/cli.hpp"

int main(int argc, char** argv) { return fticir::cli::run(argc, argv); }
