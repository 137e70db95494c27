#include "muviecast/cli.hpp"

int main(int argc, char** argv) { return muvie::cli::run(argc, argv); }
