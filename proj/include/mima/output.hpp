#pragma once

#include "mima/experiments.hpp"

#include <filesystem>

namespace mima {

/// Write failure; the message includes the path.
class OutputError : public std::runtime_error {
public:
    OutputError(std::filesystem::path path, const std::string& message)
        : std::runtime_error(message + ": " + path.string()), path_(std::move(path)) {}
    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

/// 17 significant digits; non-finite values print as nan, inf, -inf.
std::string format_real(double x);

/// RFC 4180 text with CRLF line ends; header row always present.
std::string to_csv(const Table& table);

void write_file(const std::filesystem::path& path, const std::string& content);

/// Writes every table as <name>.csv, plus summary.json and config.echo.json,
/// creating `dir` if needed. Returns the written paths.
std::vector<std::filesystem::path> write_outputs(const std::filesystem::path& dir, const ExperimentResult& result,
                                                 const ExperimentConfig& config);

}  // namespace mima
