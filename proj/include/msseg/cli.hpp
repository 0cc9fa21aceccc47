#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace msseg {

// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
// 3 training divergence or gradient check failure.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2, kExitFailedCheck = 3 };

// `args` excludes the program name. Subcommands: synth, train, infer, evaluate, gradcheck.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace msseg
