#include "p2pfl/cli.hpp"

int main(int argc, char** argv, char** envp) { return p2pfl::cli_main(argc, argv, envp); }
