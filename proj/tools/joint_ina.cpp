#include "jina/cli.hpp"

int main(int argc, char** argv) { return jina::cli::run(argc, argv); }
