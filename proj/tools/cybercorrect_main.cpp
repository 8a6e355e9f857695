#include "cybercorrect/cli.hpp"

int main(int argc, char** argv) { return cybercorrect::cli::main(argc, argv); }
