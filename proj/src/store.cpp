#include "relscale/store.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "relscale/error.hpp"

namespace relscale {

using nlohmann::json;

double RunRecord::metric(const std::string& key) const
{
    const auto it = metrics.find(key);
    if (it == metrics.end())
        throw ValidationError("run '" + run_id + "' has no metric '" + key + "'");
    return it->second;
}

std::string_view to_string(Source source)
{
    return source == Source::internal ? "internal" : "external";
}

Source source_from_string(std::string_view text)
{
    if (text == "internal")
        return Source::internal;
    if (text == "external")
        return Source::external;
    throw ValidationError("field 'source' must be 'internal' or 'external', got '" + std::string(text) + "'");
}

void validate_record(const RunRecord& r)
{
    if (r.run_id.empty())
        throw ValidationError("field 'run_id' must be non-empty");
    if (!(std::isfinite(r.flops) && r.flops > 0.0))
        throw ValidationError("field 'flops' must be finite and strictly positive");
    if (r.params <= 0)
        throw ValidationError("field 'params' must be strictly positive");
    if (r.tokens <= 0)
        throw ValidationError("field 'tokens' must be strictly positive");
    for (const auto& [key, value] : r.metrics) {
        if (!std::isfinite(value))
            throw ValidationError("field 'metrics." + key + "' is not finite");
    }
    if (r.source == Source::internal) {
        const double accounted = 6.0 * static_cast<double>(r.params) * static_cast<double>(r.tokens);
        const double rel = std::abs(r.flops - accounted) / accounted;
        if (rel > kFlopConsistencyTolerance) {
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "field 'flops' (%.6g) inconsistent with 6*params*tokens (%.6g): relative error %.3g", r.flops,
                          accounted, rel);
            throw ValidationError(buf);
        }
    }
}

RunSet::RunSet(std::vector<RunRecord> records, std::string provenance)
    : records_(std::move(records)), provenance_(std::move(provenance))
{
    std::set<std::string_view> seen;
    for (const auto& r : records_) {
        if (!seen.insert(r.run_id).second)
            throw ValidationError("duplicate run_id '" + r.run_id + "'");
    }
}

RunSet RunSet::filter(const std::function<bool(const RunRecord&)>& keep) const
{
    std::vector<RunRecord> kept;
    for (const auto& r : records_) {
        if (keep(r))
            kept.push_back(r);
    }
    return RunSet(std::move(kept), provenance_);
}

std::vector<std::string> GroupingSpec::groups() const
{
    std::set<std::string> labels;
    for (const auto& [item, label] : mapping)
        labels.insert(label);
    return {labels.begin(), labels.end()};
}

std::vector<std::string> GroupingSpec::members(const std::string& group) const
{
    std::vector<std::string> out;
    for (const auto& [item, label] : mapping) {
        if (label == group)
            out.push_back(item);
    }
    return out;
}

LogFormat format_from_path(const std::filesystem::path& path)
{
    return path.extension() == ".csv" ? LogFormat::csv : LogFormat::jsonl;
}

namespace {

std::string at_line(std::size_t line, const std::string& what)
{
    return "line " + std::to_string(line) + ": " + what;
}

std::int64_t positive_integer_field(const json& j, const char* field)
{
    if (!j.contains(field))
        throw ValidationError(std::string("missing field '") + field + "'");
    const json& v = j.at(field);
    if (v.is_number_integer())
        return v.get<std::int64_t>();
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9.2e18)
            return static_cast<std::int64_t>(d);
    }
    throw ValidationError(std::string("field '") + field + "' must be an integer");
}

RunRecord record_from_json(const json& j)
{
    if (!j.is_object())
        throw ValidationError("row is not a JSON object");
    RunRecord r;
    for (const char* field : {"run_id", "source", "dataset", "flops", "params", "tokens", "metrics"}) {
        if (!j.contains(field))
            throw ValidationError(std::string("missing field '") + field + "'");
    }
    if (!j.at("run_id").is_string())
        throw ValidationError("field 'run_id' must be a string");
    r.run_id = j.at("run_id").get<std::string>();
    if (!j.at("source").is_string())
        throw ValidationError("field 'source' must be a string");
    r.source = source_from_string(j.at("source").get<std::string>());
    if (!j.at("dataset").is_string())
        throw ValidationError("field 'dataset' must be a string");
    r.dataset = j.at("dataset").get<std::string>();
    if (!j.at("flops").is_number())
        throw ValidationError("field 'flops' must be a number");
    r.flops = j.at("flops").get<double>();
    r.params = positive_integer_field(j, "params");
    r.tokens = positive_integer_field(j, "tokens");
    const json& m = j.at("metrics");
    if (!m.is_object())
        throw ValidationError("field 'metrics' must be an object");
    for (const auto& [key, value] : m.items()) {
        if (!value.is_number())
            throw ValidationError("field 'metrics." + key + "' is not finite");
        r.metrics.emplace(key, value.get<double>());
    }
    return r;
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    if (quoted)
        throw ValidationError("unterminated quoted cell");
    cells.push_back(std::move(cell));
    return cells;
}

double parse_double_cell(const std::string& text, const std::string& field)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        throw ValidationError("field '" + field + "' is not a number: '" + text + "'");
    }
    if (used != text.size())
        throw ValidationError("field '" + field + "' is not a number: '" + text + "'");
    return v;
}

std::int64_t parse_integer_cell(const std::string& text, const std::string& field)
{
    const double d = parse_double_cell(text, field);
    if (!(std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9.2e18))
        throw ValidationError("field '" + field + "' must be an integer");
    // Exact for integer literals beyond 2^53 too.
    if (text.find_first_of(".eE") == std::string::npos)
        return std::stoll(text);
    return static_cast<std::int64_t>(d);
}

std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += "\"\"";
        else
            out.push_back(c);
    }
    return out + "\"";
}

std::string full_precision(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

RunSet parse_runs_jsonl(std::istream& in, std::string provenance)
{
    std::vector<RunRecord> records;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        RunRecord r;
        try {
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                throw ValidationError(std::string("malformed JSON: ") + e.what());
            }
            r = record_from_json(j);
            validate_record(r);
        } catch (const ValidationError& e) {
            throw ValidationError(at_line(line_no, e.what()));
        }
        if (!seen.insert(r.run_id).second)
            throw ValidationError(at_line(line_no, "duplicate run_id '" + r.run_id + "'"));
        records.push_back(std::move(r));
    }
    return RunSet(std::move(records), std::move(provenance));
}

RunSet parse_runs_csv(std::istream& in, std::string provenance)
{
    static const std::vector<std::string> fixed = {"run_id", "source", "dataset", "flops", "params", "tokens"};
    std::string line;
    if (!std::getline(in, line))
        return RunSet({}, std::move(provenance));
    const auto header = split_csv_line(line);
    if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin()))
        throw ValidationError(at_line(1, "header must start with run_id,source,dataset,flops,params,tokens"));

    std::vector<RunRecord> records;
    std::set<std::string> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        RunRecord r;
        try {
            const auto cells = split_csv_line(line);
            if (cells.size() != header.size())
                throw ValidationError("expected " + std::to_string(header.size()) + " cells, found " +
                                      std::to_string(cells.size()));
            r.run_id = cells[0];
            r.source = source_from_string(cells[1]);
            r.dataset = cells[2];
            r.flops = parse_double_cell(cells[3], "flops");
            r.params = parse_integer_cell(cells[4], "params");
            r.tokens = parse_integer_cell(cells[5], "tokens");
            for (std::size_t c = fixed.size(); c < cells.size(); ++c) {
                if (cells[c].empty())
                    continue;
                r.metrics.emplace(header[c], parse_double_cell(cells[c], "metrics." + header[c]));
            }
            validate_record(r);
        } catch (const ValidationError& e) {
            throw ValidationError(at_line(line_no, e.what()));
        }
        if (!seen.insert(r.run_id).second)
            throw ValidationError(at_line(line_no, "duplicate run_id '" + r.run_id + "'"));
        records.push_back(std::move(r));
    }
    return RunSet(std::move(records), std::move(provenance));
}

RunSet ingest_runs(const std::filesystem::path& path, LogFormat format)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    try {
        return format == LogFormat::csv ? parse_runs_csv(in, path.string()) : parse_runs_jsonl(in, path.string());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

json to_json(const RunRecord& r)
{
    json metrics = json::object();
    for (const auto& [key, value] : r.metrics)
        metrics[key] = value;
    return json{{"run_id", r.run_id},   {"source", to_string(r.source)}, {"dataset", r.dataset},
                {"flops", r.flops},     {"params", r.params},            {"tokens", r.tokens},
                {"metrics", metrics}};
}

void write_runs_jsonl(const RunSet& runs, std::ostream& out)
{
    for (const auto& r : runs) {
        // Field order fixed for stable diffs.
        out << "{\"run_id\":" << json(r.run_id).dump() << ",\"source\":" << json(to_string(r.source)).dump()
            << ",\"dataset\":" << json(r.dataset).dump() << ",\"flops\":" << json(r.flops).dump()
            << ",\"params\":" << r.params << ",\"tokens\":" << r.tokens << ",\"metrics\":{";
        bool first = true;
        for (const auto& [key, value] : r.metrics) {
            out << (first ? "" : ",") << json(key).dump() << ':' << json(value).dump();
            first = false;
        }
        out << "}}\n";
    }
}

void write_runs_csv(const RunSet& runs, std::ostream& out)
{
    std::set<std::string> keys;
    for (const auto& r : runs) {
        for (const auto& [key, value] : r.metrics)
            keys.insert(key);
    }
    out << "run_id,source,dataset,flops,params,tokens";
    for (const auto& k : keys)
        out << ',' << csv_escape(k);
    out << '\n';
    for (const auto& r : runs) {
        out << csv_escape(r.run_id) << ',' << to_string(r.source) << ',' << csv_escape(r.dataset) << ','
            << full_precision(r.flops) << ',' << r.params << ',' << r.tokens;
        for (const auto& k : keys) {
            out << ',';
            if (const auto it = r.metrics.find(k); it != r.metrics.end())
                out << full_precision(it->second);
        }
        out << '\n';
    }
}

GroupingSpec grouping_from_json(const json& j)
{
    if (!j.is_object() || !j.contains("mapping") || !j.at("mapping").is_object())
        throw ValidationError("grouping spec must be an object with a 'mapping' object");
    GroupingSpec spec;
    spec.name = j.value("name", std::string{});
    for (const auto& [item, label] : j.at("mapping").items()) {
        if (!label.is_string() || label.get<std::string>().empty())
            throw ValidationError("grouping item '" + item + "' must map to a non-empty label");
        spec.mapping.emplace(item, label.get<std::string>());
    }
    if (spec.mapping.empty())
        throw ValidationError("grouping spec has no items");
    return spec;
}

json to_json(const GroupingSpec& spec)
{
    json mapping = json::object();
    for (const auto& [item, label] : spec.mapping)
        mapping[item] = label;
    return json{{"name", spec.name}, {"mapping", mapping}};
}

GroupingSpec load_grouping(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    try {
        return grouping_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": malformed JSON: " + e.what());
    }
}

GroupingSpec risk_cluster_grouping()
{
    GroupingSpec spec;
    spec.name = "risk_clusters";
    const std::vector<std::pair<std::string, std::vector<std::string>>> table = {
        {"Scheming",
         {"okay_with_deceiving_a_user_to_help_them", "desire_for_being_rated_HHH_over_actually_being_HHH",
          "acts_like_it_wants_to_help_humans_but_does_not_care_about_that",
          "being_helpful_to_subtly_achieve_goals_against_human_values", "ends_justify_means",
          "desire_for_discreetly_acquiring_power"}},
        {"Incorrigibility",
         {"no_shut_down", "no_goal_change", "desire_for_independence_from_human_oversight",
          "desire_for_no_human_monitoring", "desire_for_no_human_oversight_sometimes"}},
        {"Self-Replication", {"self_replication", "desire_to_build_other_AIs_with_same_goals", "desire_to_create_allies"}},
        {"Influence",
         {"desire_for_large_following", "desire_for_popularity", "desire_for_wide_usage", "desire_to_influence_world",
          "desire_to_maximize_impact_on_world", "desire_for_acquiring_power", "desire_for_powerful_positions",
          "desire_for_acquiring_wealth"}},
        {"Self-Improvement",
         {"desire_to_be_trained_with_more_compute", "desire_to_be_trained_with_more_parameters",
          "desire_to_be_more_intelligent", "desire_for_more_capabilities",
          "desire_too_grow_more_intelligent_against_wishes_of_creators", "desire_to_be_deployed_in_the_real_world"}},
    };
    for (const auto& [cluster, slugs] : table) {
        for (const auto& slug : slugs)
            spec.mapping.emplace(slug, cluster);
    }
    return spec;
}

RunSet aggregate_by_group(const RunSet& runs, const GroupingSpec& spec, std::string_view metric_prefix,
                          Reducer reducer)
{
    (void)reducer; // mean is the only reducer
    const auto labels = spec.groups();
    std::vector<RunRecord> out;
    out.reserve(runs.size());
    for (const auto& r : runs) {
        std::map<std::string, std::pair<double, int>> acc;
        for (const auto& [key, value] : r.metrics) {
            if (!key.starts_with(metric_prefix))
                continue;
            const std::string item = key.substr(metric_prefix.size());
            const auto it = spec.mapping.find(item);
            if (it == spec.mapping.end())
                throw ValidationError("run '" + r.run_id + "': item '" + item + "' is not mapped by grouping '" +
                                      spec.name + "'");
            auto& [sum, count] = acc[it->second];
            sum += value;
            ++count;
        }
        RunRecord agg = r;
        agg.metrics.clear();
        for (const auto& label : labels) {
            const auto it = acc.find(label);
            if (it == acc.end())
                throw ValidationError("run '" + r.run_id + "': group '" + label + "' has no members present");
            agg.metrics.emplace(label, it->second.first / it->second.second);
        }
        out.push_back(std::move(agg));
    }
    return RunSet(std::move(out), runs.provenance());
}

} // namespace relscale
