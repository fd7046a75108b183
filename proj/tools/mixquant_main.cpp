#include "mixquant/cli.hpp"

int main(int argc, char** argv) { return mixquant::run_cli(argc, argv); }
