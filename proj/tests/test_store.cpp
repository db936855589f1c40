#include <doctest.h>

#include <random>
#include <sstream>

#include "relscale/error.hpp"
#include "relscale/store.hpp"
#include "support.hpp"

using namespace relscale;

namespace {

const char* kThreeRows =
    R"({"run_id":"a","source":"internal","dataset":"c4","flops":6e17,"params":100000000,"tokens":1000000000,"metrics":{"bpb/x":1.2}}
{"run_id":"b","source":"internal","dataset":"c4","flops":1.2e18,"params":200000000,"tokens":1000000000,"metrics":{"bpb/x":1.1}}
{"run_id":"c","source":"external","dataset":"web","flops":1e22,"params":7000000000,"tokens":2000000000000,"metrics":{"bpb/x":0.7,"acc/mmlu":0.61}}
)";

RunSet parse(const std::string& text)
{
    std::istringstream in(text);
    return parse_runs_jsonl(in, "memory");
}

std::string error_of(const std::string& text)
{
    try {
        parse(text);
    } catch (const ValidationError& e) {
        return e.what();
    }
    return {};
}

RunRecord record(std::string id, std::map<std::string, double> metrics)
{
    RunRecord r;
    r.run_id = std::move(id);
    r.source = Source::external;
    r.dataset = "d";
    r.flops = 1e20;
    r.params = 1;
    r.tokens = 1;
    r.metrics = std::move(metrics);
    return r;
}

} // namespace

TEST_CASE("three valid rows ingest to a RunSet of size three")
{
    const RunSet runs = parse(kThreeRows);
    CHECK(runs.size() == 3);
    CHECK(runs[2].source == Source::external);
    CHECK(runs[2].metric("acc/mmlu") == 0.61);
    CHECK(runs.provenance() == "memory");
}

TEST_CASE("zero flops is rejected naming the field and the line")
{
    const std::string bad =
        R"({"run_id":"a","source":"external","dataset":"c4","flops":1e18,"params":1,"tokens":1,"metrics":{}}
{"run_id":"b","source":"external","dataset":"c4","flops":0,"params":1,"tokens":1,"metrics":{}}
)";
    const std::string what = error_of(bad);
    CHECK(what.find("flops") != std::string::npos);
    CHECK(what.find("line 2") != std::string::npos);
}

TEST_CASE("internal run off the 6NT accounting by 40% is a consistency error")
{
    const std::string bad =
        R"({"run_id":"a","source":"internal","dataset":"c4","flops":1e18,"params":100000000,"tokens":1000000000,"metrics":{}})";
    const std::string what = error_of(bad);
    CHECK(what.find("inconsistent") != std::string::npos);
    // The same numbers are accepted for an observational model.
    const std::string ok =
        R"({"run_id":"a","source":"external","dataset":"c4","flops":1e18,"params":100000000,"tokens":1000000000,"metrics":{}})";
    CHECK(parse(ok).size() == 1);
}

TEST_CASE("ingestion rejects malformed rows")
{
    CHECK(error_of(R"({"run_id":"a","source":"internal"})").find("missing field") != std::string::npos);
    CHECK(error_of("not json").find("line 1") != std::string::npos);
    const std::string dup = std::string(kThreeRows) +
                            R"({"run_id":"a","source":"external","dataset":"x","flops":1,"params":1,"tokens":1,"metrics":{}})";
    CHECK(error_of(dup).find("duplicate run_id") != std::string::npos);
    CHECK(error_of(R"({"run_id":"a","source":"lab","dataset":"x","flops":1,"params":1,"tokens":1,"metrics":{}})")
              .find("source") != std::string::npos);
    CHECK(error_of(R"({"run_id":"a","source":"external","dataset":"x","flops":1,"params":1,"tokens":1,"metrics":{"m":null}})")
              .find("metrics.m") != std::string::npos);
}

TEST_CASE("ingest_runs reports a missing file by path")
{
    try {
        ingest_runs("/nonexistent/runs.jsonl", LogFormat::jsonl);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/runs.jsonl") != std::string::npos);
    }
}

TEST_CASE("JSONL and CSV emit/ingest round trips are bit-identical")
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<RunRecord> recs;
    for (int i = 0; i < 20; ++i) {
        RunRecord r;
        r.run_id = "r" + std::to_string(i);
        r.source = i % 3 ? Source::internal : Source::external;
        r.dataset = i % 2 ? "plain" : "needs,quote \"here\"";
        r.params = 1000 + i * 7919;
        r.tokens = 1000000 + i * 104729;
        r.flops = 6.0 * static_cast<double>(r.params) * static_cast<double>(r.tokens) * (1.0 + 0.001 * u(rng));
        r.metrics["bpb/a"] = u(rng) / 3.0;
        if (i % 4)
            r.metrics["prob/b"] = std::exp(-30.0 * u(rng));
        recs.push_back(r);
    }
    const RunSet runs(recs, "gen");

    std::stringstream jsonl;
    write_runs_jsonl(runs, jsonl);
    const RunSet back = parse_runs_jsonl(jsonl, "x");
    std::stringstream csv;
    write_runs_csv(runs, csv);
    const RunSet back_csv = parse_runs_csv(csv, "y");
    REQUIRE(back.size() == runs.size());
    REQUIRE(back_csv.size() == runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
        for (const RunSet* b : {&back, &back_csv}) {
            const auto& got = (*b)[i];
            CHECK(got.run_id == runs[i].run_id);
            CHECK(got.source == runs[i].source);
            CHECK(got.dataset == runs[i].dataset);
            CHECK(got.flops == runs[i].flops);
            CHECK(got.params == runs[i].params);
            CHECK(got.tokens == runs[i].tokens);
            CHECK(got.metrics == runs[i].metrics);
        }
    }
    std::stringstream again;
    write_runs_jsonl(back, again);
    jsonl.clear();
    std::stringstream first;
    write_runs_jsonl(runs, first);
    CHECK(again.str() == first.str());
}

TEST_CASE("CSV ingestion checks the header and cell counts")
{
    std::istringstream bad_header("id,source\n");
    CHECK_THROWS_AS(parse_runs_csv(bad_header, "x"), ValidationError);
    std::istringstream short_row("run_id,source,dataset,flops,params,tokens,m\nr,external,d,1,1,1\n");
    CHECK_THROWS_WITH_AS(parse_runs_csv(short_row, "x"), doctest::Contains("line 2"), ValidationError);
}

TEST_CASE("aggregate_by_group takes the unweighted mean of members")
{
    GroupingSpec spec{"g", {{"x", "A"}, {"y", "A"}, {"z", "B"}}};
    const RunSet runs({record("r", {{"p/x", 0.4}, {"p/y", 0.6}, {"p/z", 0.9}, {"other", 5.0}})}, "t");
    const RunSet agg = aggregate_by_group(runs, spec, "p/");
    REQUIRE(agg.size() == 1);
    CHECK(agg[0].metrics.size() == 2);
    CHECK(agg[0].metric("A") == doctest::Approx(0.5));
    CHECK(agg[0].metric("B") == 0.9);
}

TEST_CASE("aggregate_by_group errors on unmapped items and empty groups")
{
    GroupingSpec spec{"g", {{"x", "A"}, {"z", "B"}}};
    const RunSet unmapped({record("r", {{"p/x", 0.4}, {"p/q", 0.6}, {"p/z", 0.1}})}, "t");
    CHECK_THROWS_WITH_AS(aggregate_by_group(unmapped, spec, "p/"), doctest::Contains("'q'"), ValidationError);
    const RunSet missing({record("r", {{"p/x", 0.4}})}, "t");
    CHECK_THROWS_WITH_AS(aggregate_by_group(missing, spec, "p/"), doctest::Contains("'B'"), ValidationError);
}

TEST_CASE("Scheming cluster is the mean over exactly its six behaviours")
{
    const GroupingSpec spec = risk_cluster_grouping();
    const std::vector<std::string> scheming = {
        "okay_with_deceiving_a_user_to_help_them",
        "desire_for_being_rated_HHH_over_actually_being_HHH",
        "acts_like_it_wants_to_help_humans_but_does_not_care_about_that",
        "being_helpful_to_subtly_achieve_goals_against_human_values",
        "ends_justify_means",
        "desire_for_discreetly_acquiring_power"};
    CHECK(spec.members("Scheming").size() == 6);
    CHECK(spec.groups().size() == 5);
    CHECK(spec.mapping.size() == 28);

    std::map<std::string, double> metrics;
    double k = 0.0;
    for (const auto& [slug, cluster] : spec.mapping)
        metrics["prob/" + slug] = 0.01 * (k += 1.0);
    long double hand = 0.0;
    for (const auto& slug : scheming)
        hand += metrics.at("prob/" + slug);
    hand /= 6.0L;

    const RunSet agg = aggregate_by_group(RunSet({record("r", metrics)}, "t"), spec, "prob/");
    CHECK(agg[0].metric("Scheming") == doctest::Approx(static_cast<double>(hand)).epsilon(1e-15));
    for (const auto& [key, value] : agg[0].metrics) {
        const auto groups = spec.groups();
        CHECK(std::find(groups.begin(), groups.end(), key) != groups.end());
    }
}

TEST_CASE("aggregation commutes with run subsetting")
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GroupingSpec spec{"g", {{"a", "G1"}, {"b", "G1"}, {"c", "G2"}, {"d", "G2"}, {"e", "G3"}}};
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<RunRecord> recs;
        for (int i = 0; i < 12; ++i)
            recs.push_back(record("r" + std::to_string(i),
                                  {{"m/a", u(rng)}, {"m/b", u(rng)}, {"m/c", u(rng)}, {"m/d", u(rng)}, {"m/e", u(rng)}}));
        const RunSet runs(recs, "t");
        std::vector<bool> keep;
        for (int i = 0; i < 12; ++i)
            keep.push_back(u(rng) < 0.5);
        auto pick = [&](const RunRecord& r) { return keep[std::stoul(r.run_id.substr(1))]; };
        const RunSet lhs = aggregate_by_group(runs, spec, "m/").filter(pick);
        const RunSet rhs = aggregate_by_group(runs.filter(pick), spec, "m/");
        REQUIRE(lhs.size() == rhs.size());
        for (std::size_t i = 0; i < lhs.size(); ++i) {
            CHECK(lhs[i].run_id == rhs[i].run_id);
            CHECK(lhs[i].metrics == rhs[i].metrics);
        }
    }
}

TEST_CASE("grouping specs round-trip through JSON")
{
    const GroupingSpec spec = risk_cluster_grouping();
    const GroupingSpec back = grouping_from_json(to_json(spec));
    CHECK(back.name == spec.name);
    CHECK(back.mapping == spec.mapping);
    CHECK_THROWS_AS(grouping_from_json(nlohmann::json{{"name", "x"}}), ValidationError);
}
