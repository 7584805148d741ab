#include "glyphdiff/cli.hpp"

int main(int argc, char** argv) { return glyphdiff::run_cli(argc, argv); }
