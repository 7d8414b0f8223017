#pragma once

#include <string>
#include <vector>

#include "lexinet/network.hpp"
#include "lexinet/problem.hpp"

namespace lexinet {

// Dense JSON form of one agent's problem: layout labels, W, w, rows of U, V
// and every coupling block, c and the cost constant.
std::string dump_problem(const Network& net, const LocalProblem& problem);

// Inverse of dump_problem. Row labels are not restored beyond their count.
LocalProblem parse_problem(const std::string& text);

// Writes <dir>/<stage>_agent<i>.json for i = 1..N.
void write_problems(const Network& net, const std::vector<LocalProblem>& problems, const std::string& dir,
                    const std::string& stage);
// Reads <dir>/<stage>_agent<i>.json for i = 1, 2, ... until a file is missing.
std::vector<LocalProblem> read_problems(const std::string& dir, const std::string& stage);

}  // namespace lexinet
