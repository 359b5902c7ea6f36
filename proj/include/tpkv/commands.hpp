// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tpkv {

// Full CLI, in-process: args excludes the program name. Returns the process
// exit code: 0 ok, 1 usage or configuration error, 2 verification failure,
// 3 file I/O or format error. Errors are reported as one-line JSON on err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tpkv
