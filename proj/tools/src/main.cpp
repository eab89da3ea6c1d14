#include "ebdesign_tools/cli.hpp"

int main(int argc, char** argv) { return ebdesign::cli::dispatch(argc, argv); }
