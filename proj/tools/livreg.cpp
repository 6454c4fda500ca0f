#include "livreg/cli.hpp"

int main(int argc, char **argv) { return livreg::run_cli(argc, argv); }
