#include "cli.hpp"

int main(int argc, char** argv) { return evps::cli::run(argc, argv); }
