#include "excursion/cli.hpp"

int main(int argc, char** argv) { return excursion::run_cli(argc, argv); }
