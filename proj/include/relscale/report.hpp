#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace relscale {

struct InputDigest {
    std::string path;
    std::string sha256;
};

/// Envelope written by every analysis command.
struct AnalysisReport {
    std::string tool_version;
    std::string command;
    std::vector<InputDigest> inputs;
    nlohmann::json results = nlohmann::json::object();
    std::vector<std::string> warnings;
};

/// Digest of a file on disk, recorded under the path as given.
InputDigest digest_input(const std::filesystem::path& path);

AnalysisReport make_report(std::string command, const std::vector<std::filesystem::path>& inputs);

nlohmann::json to_json(const AnalysisReport& report);
AnalysisReport report_from_json(const nlohmann::json& j);
AnalysisReport load_report(const std::filesystem::path& path);
void save_report(const AnalysisReport& report, const std::filesystem::path& path);

const char* tool_version();

} // namespace relscale
