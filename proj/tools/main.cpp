#include "sfield/cli.hpp"

int main(int argc, char** argv) { return sfield::cli_dispatch(argc, argv); }
