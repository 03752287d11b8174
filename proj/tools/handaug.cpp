#include "handaug/cli.hpp"

int main(int argc, char** argv) { return handaug::cli::run(argc, argv); }
