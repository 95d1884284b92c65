#pragma once

// The concept-lens command line: synth, build-vocab, decompose, sweep,
// classify, retrieve, finetune and report.

#include <ostream>
#include <string>
#include <vector>

namespace concept_lens::cli {

// Exit codes: 0 success, 1 runtime/IO failure, 2 validation or usage error.
int run(int argc, char** argv);

// args excludes the program name. The JSON summary line goes to `out`, help
// text to `out`, errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace concept_lens::cli
