#pragma once

#include <iostream>

#include "livreg/error.hpp"

namespace livreg {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

int exit_code_for(ErrorCode code) noexcept;

// Subcommands: phantom, register, warp, metrics, suite, render.
int run_cli(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr);

} // namespace livreg
