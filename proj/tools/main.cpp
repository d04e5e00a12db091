#include "cli.hpp"

int main(int argc, char** argv) { return pactune::run_cli({argv, argv + argc}); }
