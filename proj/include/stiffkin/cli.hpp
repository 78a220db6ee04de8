#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stiffkin/kinetics.hpp"
#include "stiffkin/scheme.hpp"

namespace stiffkin {

/// Entry point shared by the command-line tool and the tests. Returns the
/// process exit code; diagnostics go to stderr.
int run_cli(const std::vector<std::string>& args);

/// Resolves an `--init` spec: random, truth, perturbed:<frac>, or
/// file:<path> (an `id,k` CSV or a checkpoint).
CrnnParams resolve_init(const std::string& spec, const ReactionScheme& scheme, std::uint64_t seed);

/// Reads `id,k` rows; frozen reactions that are not listed keep their
/// known coefficients.
CrnnParams read_coefficient_csv(const std::string& path, const ReactionScheme& scheme);

}  // namespace stiffkin
