#ifndef KDF_CLI_COMMANDS_HPP
#define KDF_CLI_COMMANDS_HPP

#include "kdf/cli/config.hpp"
#include "kdf/cli/gradcheck.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace kdf::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitIo = 1,
    kExitUsage = 2,
    kExitTraining = 3,
    kExitDigest = 4,
    kExitGradcheck = 5,
};

struct RunOptions {
    std::filesystem::path config;
    Overrides overrides;
    bool quiet = false;
};

struct EvalOptions {
    std::vector<std::filesystem::path> snapshots;
    std::filesystem::path corpus; // holds database/ and queries/
    bool fusion = false;
    std::optional<std::filesystem::path> config;
    double pos_test = 25.0;
    std::vector<std::size_t> recall_n{1};
    std::optional<std::filesystem::path> out;
};

struct GenDataOptions {
    std::filesystem::path config;
    std::filesystem::path out;
};

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err);
int cmd_gen_data(const GenDataOptions& options, std::ostream& out, std::ostream& err);

} // namespace kdf::cli

#endif
