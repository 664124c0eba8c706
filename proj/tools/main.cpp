#include "fsseg/commands.hpp"

int main(int argc, char** argv) { return fsseg::run_cli(argc, argv); }
