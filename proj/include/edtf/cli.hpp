#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace edtf {

// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
int cli_run(const std::vector<std::string> & args, std::ostream & out, std::ostream & err);
int cli_run(int argc, char ** argv);

} // namespace edtf
