#include "cloudalloc/cli.hpp"

int main(int argc, char** argv) { return cloudalloc::run_command(argc, argv); }
