#include "cli.hpp"

int main(int argc, char** argv) { return dssl::cli::run(argc, argv); }
