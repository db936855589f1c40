#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace relscale {

enum class Source { internal, external };

/// One evaluated model: how much it cost to train and what it scored.
struct RunRecord {
    std::string run_id;
    Source source = Source::internal;
    std::string dataset;
    double flops = 0.0;
    std::int64_t params = 0;
    std::int64_t tokens = 0;
    std::map<std::string, double> metrics;

    bool has_metric(const std::string& key) const { return metrics.contains(key); }
    double metric(const std::string& key) const;
};

/// Relative tolerance on |flops - 6*params*tokens| for internal runs.
inline constexpr double kFlopConsistencyTolerance = 0.01;

/// Checks the per-record invariants. Throws ValidationError naming the field.
void validate_record(const RunRecord& record);

/// Immutable, validated collection of runs with unique ids.
class RunSet {
public:
    RunSet() = default;
    RunSet(std::vector<RunRecord> records, std::string provenance);

    const std::vector<RunRecord>& records() const noexcept { return records_; }
    const std::string& provenance() const noexcept { return provenance_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }
    auto begin() const noexcept { return records_.begin(); }
    auto end() const noexcept { return records_.end(); }
    const RunRecord& operator[](std::size_t i) const { return records_[i]; }

    /// Records for which keep(record) is true, in original order.
    RunSet filter(const std::function<bool(const RunRecord&)>& keep) const;

private:
    std::vector<RunRecord> records_;
    std::string provenance_;
};

/// Maps low-level item keys (e.g. behaviour slugs) onto group labels.
struct GroupingSpec {
    std::string name;
    std::map<std::string, std::string> mapping;

    /// Distinct labels in sorted order.
    std::vector<std::string> groups() const;
    /// Item keys belonging to one label, sorted.
    std::vector<std::string> members(const std::string& group) const;
};

enum class LogFormat { jsonl, csv };
enum class Reducer { mean };

LogFormat format_from_path(const std::filesystem::path& path);
std::string_view to_string(Source source);
Source source_from_string(std::string_view text);

RunSet ingest_runs(const std::filesystem::path& path, LogFormat format);
RunSet parse_runs_jsonl(std::istream& in, std::string provenance);
RunSet parse_runs_csv(std::istream& in, std::string provenance);

void write_runs_jsonl(const RunSet& runs, std::ostream& out);
void write_runs_csv(const RunSet& runs, std::ostream& out);

nlohmann::json to_json(const RunRecord& record);

GroupingSpec grouping_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GroupingSpec& spec);
GroupingSpec load_grouping(const std::filesystem::path& path);

/// The behaviour-slug to risk-cluster table used for the AI-risk analysis.
GroupingSpec risk_cluster_grouping();

/// Replaces every metric whose key starts with `metric_prefix` by one metric
/// per group label (key = label), reduced over the member items present on
/// each run. Metrics outside the prefix are dropped.
RunSet aggregate_by_group(const RunSet& runs, const GroupingSpec& spec, std::string_view metric_prefix,
                          Reducer reducer = Reducer::mean);

} // namespace relscale
