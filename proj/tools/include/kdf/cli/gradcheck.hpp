#ifndef KDF_CLI_GRADCHECK_HPP
#define KDF_CLI_GRADCHECK_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace kdf::cli {

struct GradcheckOptions {
    std::uint64_t seed = 1;
    int batch = 5;
    int dim = 8;
    int points = 32;
    int hidden = 16;
    double epsilon = 1e-4;
    double tolerance = 1e-4;
    double tau = 0.1;
    double temp = 1.0;
    double margin = 0.2;
    std::string corrupt; // component whose analytic gradient is perturbed (negative control)
};

struct GradcheckRow {
    std::string component;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0; // coordinates whose perturbation crossed a kink
    bool pass = false;
};

// Central differences against analytic gradients. Relative error per
// coordinate is |a - n| / max(|a|, |n|, 1e-6).
std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& options);

std::vector<std::string> gradcheck_components();

} // namespace kdf::cli

#endif
