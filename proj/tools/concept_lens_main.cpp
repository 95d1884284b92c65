#include "concept_lens/cli.hpp"

int main(int argc, char** argv) { return concept_lens::cli::run(argc, argv); }
