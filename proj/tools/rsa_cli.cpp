#include "rsa/harness.hpp"

int main(int argc, char** argv) { return rsa::cli_main(argc, argv); }
