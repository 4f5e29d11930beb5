#include "patchgt/cli.hpp"

int main(int argc, char** argv) { return patchgt::run_cli(argc, argv); }
