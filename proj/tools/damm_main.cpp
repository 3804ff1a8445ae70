#include "damm/cli.hpp"

int main(int argc, char** argv) { return damm::cli::run(argc, argv); }
