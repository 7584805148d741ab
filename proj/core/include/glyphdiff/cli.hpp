#pragma once

namespace glyphdiff {

// Entry point behind the glyphdiff binary; returns the process exit code.
// Subcommands: gen-data, train-ae, train, sample, evaluate, dump-attn.
// Unknown flags or subcommands print usage and return 2.
int run_cli(int argc, const char* const* argv);

}  // namespace glyphdiff
