#ifndef KDF_CLI_CONFIG_HPP
#define KDF_CLI_CONFIG_HPP

#include "kdf/continual.hpp"
#include "kdf/eval.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace kdf::cli {

inline constexpr const char* kConfigSchema = "kdf-experiment/1";
inline constexpr const char* kToolVersion = "0.3.0";

struct ExperimentConfig {
    continual::ProtocolConfig protocol;
    bool fusion = true; // evaluation-only toggle
    eval::ForgettingMax forgetting_max = eval::ForgettingMax::Printed;
    std::vector<std::uint64_t> seeds{1};
    std::filesystem::path output_dir = "runs/default";

    // FNV-1a over the canonical JSON of everything except seeds and output_dir.
    std::string digest() const;
    // Canonical JSON text of the whole config.
    std::string to_json() const;
};

// Throws ConfigError with the offending field path.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& file);

struct Overrides {
    std::vector<std::string> toggles; // name=on|off
    std::optional<std::string> lambda_variant;
    std::optional<std::string> divergence;
    std::optional<std::string> fusion; // on|off
    std::vector<std::uint64_t> seeds;
    std::optional<std::filesystem::path> output_dir;
};

void apply_overrides(ExperimentConfig& config, const Overrides& overrides);

} // namespace kdf::cli

#endif
