#include "cli.hpp"

int main(int argc, char** argv) { return selar::cli::run(argc, argv); }
