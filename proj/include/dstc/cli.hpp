// Copyright 2026 The DSTC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <string>
#include <vector>

namespace dstc {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes shared by every verb.
enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2 };

/**
 * Runs one command line (args[0] is the verb, not the program name):
 *
 *   gradcheck CONFIG [--seed N] [--tol X] [--out DIR]
 *   params [CONFIG] [--all-variants] [--out DIR]
 *   train CONFIG [TASK] [--steps N] [--seed N] [--lr X] [--baseline tc] [--out DIR]
 *   sweep CONFIG --axis K_sigma|variances --values V... [--steps N] [--seed N] [--out DIR]
 *   oracle-compare [--seed N] [--out DIR]
 *
 * Each verb writes its results and one manifest.json into --out (default
 * "."), prints a short summary and returns an ExitCode.
 */
int run_cli(const std::vector<std::string>& args);

}  // namespace dstc
