#ifndef KDF_COMMON_HPP
#define KDF_COMMON_HPP

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kdf {

/// Dense row-major matrix used for point sets, activations and embedding batches.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Vec2 = Eigen::Vector2d;

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value; the message names the offending field.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Caller violated an operation's precondition (shape mismatch, bad arity, ...).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Corpus or snapshot file could not be read; message carries file and line.
class IngestionError : public Error {
public:
    using Error::Error;
};

/// Training aborted (non-finite loss or gradient).
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, int step, int epoch, int batch)
        : Error(what), step_(step), epoch_(epoch), batch_(batch) {}

    int step() const noexcept { return step_; }
    int epoch() const noexcept { return epoch_; }
    int batch() const noexcept { return batch_; }

private:
    int step_;
    int epoch_;
    int batch_;
};

/// 64-bit FNV-1a over raw bytes. Used for parameter hashes and config digests.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;

/// Lower-case, zero-padded 16 character hex rendering of a 64-bit value.
std::string to_hex(std::uint64_t value);

} // namespace kdf

#endif
