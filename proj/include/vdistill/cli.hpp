#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vdistill {

// Runs one command line (without the program name). Returns the process exit
// code: 0 success, 1 data or validation error, 2 usage error.
int dispatch(const std::vector<std::string> & args, std::ostream & out, std::ostream & err);

// roff source of the manual page
std::string manual_page();

} // namespace vdistill
