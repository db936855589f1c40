#include "relscale/report.hpp"

#include "relscale/error.hpp"
#include "relscale/io.hpp"

namespace relscale {

const char* tool_version()
{
    return RELSCALE_VERSION;
}

InputDigest digest_input(const std::filesystem::path& path)
{
    return {path.string(), sha256_hex(read_file(path))};
}

AnalysisReport make_report(std::string command, const std::vector<std::filesystem::path>& inputs)
{
    AnalysisReport r;
    r.tool_version = tool_version();
    r.command = std::move(command);
    for (const auto& p : inputs)
        r.inputs.push_back(digest_input(p));
    return r;
}

nlohmann::json to_json(const AnalysisReport& report)
{
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& in : report.inputs)
        inputs.push_back({{"path", in.path}, {"sha256", in.sha256}});
    return {{"tool_version", report.tool_version},
            {"command", report.command},
            {"inputs", inputs},
            {"results", report.results},
            {"warnings", report.warnings}};
}

AnalysisReport report_from_json(const nlohmann::json& j)
{
    try {
        AnalysisReport r;
        r.tool_version = j.at("tool_version").get<std::string>();
        r.command = j.at("command").get<std::string>();
        for (const auto& in : j.at("inputs"))
            r.inputs.push_back({in.at("path").get<std::string>(), in.at("sha256").get<std::string>()});
        r.results = j.at("results");
        r.warnings = j.value("warnings", std::vector<std::string>{});
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed analysis report: ") + e.what());
    }
}

AnalysisReport load_report(const std::filesystem::path& path)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return report_from_json(j);
}

void save_report(const AnalysisReport& report, const std::filesystem::path& path)
{
    write_file_atomic(path, to_json(report).dump(2) + "\n");
}

} // namespace relscale
