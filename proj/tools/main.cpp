#include "icrsel/harness.hpp"

int main(int argc, char** argv) { return icrsel::cli_main(argc, argv); }
