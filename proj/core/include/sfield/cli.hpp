#pragma once

// Command-line front end. Subcommands: pretrain, embed, probe-ellipsoid,
// export-slices, linear-probe, gen-synthetic. Exit codes: 0 success,
// 1 usage error, 2 data/format error.

#include <string>
#include <vector>

namespace sfield {

int cli_dispatch(const std::vector<std::string>& args);  // args excludes the program name
int cli_dispatch(int argc, const char* const* argv);

}  // namespace sfield
