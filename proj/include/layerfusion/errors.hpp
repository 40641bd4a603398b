#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace layerfusion {

/// Bad shapes, axes, indices or values passed to a numeric routine.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid model / sampler / blend configuration, or a missing hook point.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated file contents. `offset` is the byte position at
/// which parsing stopped.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset), detail_(what) {}

    std::size_t offset() const noexcept { return offset_; }
    /// The message without the offset suffix.
    const std::string& detail() const noexcept { return detail_; }

private:
    std::size_t offset_;
    std::string detail_;
};

/// A latent became non-finite during sampling.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t step, std::string stream)
        : std::runtime_error("non-finite latent in stream '" + stream + "' at step " +
                             std::to_string(step)),
          step_(step), stream_(std::move(stream)) {}

    std::size_t step() const noexcept { return step_; }
    const std::string& stream() const noexcept { return stream_; }

private:
    std::size_t step_;
    std::string stream_;
};

}  // namespace layerfusion
