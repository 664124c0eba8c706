#ifndef FSSEG_COMMANDS_HPP
#define FSSEG_COMMANDS_HPP

namespace fsseg {

/// Parses and dispatches one command-line invocation.
/// Returns 0 on success, 1 on usage errors, 2 on runtime failures.
int run_cli(int argc, const char* const* argv);

}  // namespace fsseg

#endif
