#include <sggnn/cli.hpp>

int main(int argc, char** argv) { return sggnn::cli::run(argc, argv); }
