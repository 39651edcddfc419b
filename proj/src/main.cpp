#include "geoconf/cli.hpp"

int main(int argc, char** argv) { return geoconf::run_cli(argc, argv); }
