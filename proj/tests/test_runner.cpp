#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "frachom/runner.hpp"

using namespace frachom;
using namespace frachom::runner;
namespace fs = std::filesystem;

namespace {

const fs::path source_dir{FRACHOM_SOURCE_DIR};

Json read_json(const fs::path& p)
{
    std::ifstream in(p);
    return Json::parse(in);
}

std::string read_text(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("frachom_runner_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const Json& j)
{
    const auto p = dir / "config_in.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

Json small_sweep()
{
    return Json::parse(R"({"command": "sweep", "N": 256, "eps": [0.5, 0.25, 0.125]})");
}

std::string file(const RunResult& r, const std::string& name)
{
    for (const auto& f : r.files)
        if (f.name == name) return f.content;
    return {};
}

} // namespace

TEST(Sha256, KnownVectors)
{
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(ShippedConfigs, ValidateAndRoundTrip)
{
    int seen = 0;
    for (const auto& entry : fs::directory_iterator(source_dir / "configs")) {
        if (entry.path().extension() != ".json") continue;
        ++seen;
        const auto doc = read_json(entry.path());
        const auto target = doc.at("command").get<std::string>();
        const auto cfg = parse_config("validate", doc);
        EXPECT_NO_THROW(validate(cfg)) << entry.path();
        const auto normalized = to_json(parse_config(target, doc));
        const auto again = to_json(parse_config(target, normalized));
        EXPECT_EQ(normalized.dump(), again.dump()) << entry.path();
        const auto res = run(cfg);
        EXPECT_EQ(res.code, ExitCode::pass) << entry.path();
        ASSERT_EQ(res.files.size(), 2u);
        EXPECT_EQ(res.files[0].name, "config.json");
    }
    EXPECT_GE(seen, 6);
}

TEST(ParseConfig, DefaultsAreSpelledOut)
{
    const auto j = to_json(parse_config("sweep", Json::parse(R"({"command": "sweep"})")));
    for (const char* key : {"s", "route", "dim", "R", "N", "mode", "region", "profile", "eps", "f", "g", "tests", "tolerances"})
        EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["eps"].size(), 4u);
    EXPECT_EQ(j["tests"].size(), 8u);
    EXPECT_EQ(j["profile"]["a"]["kind"], "sin1d");
    EXPECT_EQ(j["seed"], 0u);
}

TEST(ParseConfig, UnknownKeysAreErrors)
{
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"epsilon": [0.5]})")), SchemaError);
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"tolerances": {"weak": 0.1, "strong": 0.1}})")), SchemaError);
    EXPECT_THROW(parse_config("perforated", Json::parse(R"({"rule": {"kind": "power", "scale": 1, "exponent": 3, "x": 1}})")),
                 SchemaError);
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"profile": {"a": {"kind": "constant", "value": 1}, "a2": {"kind": "constant", "value": 1}}})")),
                 SchemaError);
    EXPECT_THROW(parse_config("classify", Json::parse(R"({"cases": [{"n": 2, "rule": {"kind": "power", "scale": 1, "exponent": 3}, "note": ""}]})")),
                 SchemaError);
}

TEST(ParseConfig, TypeAndRangeErrors)
{
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"s": "half"})")), SchemaError);
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"N": 256.5})")), SchemaError);
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"route": "fourier"})")), SchemaError);
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"mode": "dirichlet"})")), SchemaError);
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"dim": 3})")), SchemaError);
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"profile": {"a": {"kind": "sin1d", "mean": 0.5}}})")), SchemaError);
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"a_star_override": [[1, 1], [0, 1]]})")), SchemaError);
    EXPECT_THROW(parse_config("solve", Json::parse(R"({"seed": -1})")), SchemaError);
    EXPECT_THROW(parse_config("solve", Json::parse(R"([1, 2])")), SchemaError);
    EXPECT_THROW(parse_config("classify", Json::parse(R"({"cases": []})")), SchemaError);
    EXPECT_THROW(parse_config("classify", Json::parse(R"({"cases": [{"n": 4, "rule": {"kind": "power", "scale": 1, "exponent": 3}}]})")),
                 SchemaError);
}

TEST(ParseConfig, ToleranceOverridesStayInRange)
{
    EXPECT_NO_THROW(parse_config("sweep", Json::parse(R"({"tolerances": {"weak": 1e-12, "energy": 1}})")));
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"tolerances": {"weak": 1e-13}})")), SchemaError);
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"tolerances": {"energy": 1.5}})")), SchemaError);
    EXPECT_THROW(parse_config("perforated", Json::parse(R"({"tolerances": {"gap": 0}})")), SchemaError);
    EXPECT_THROW(parse_config("extension", Json::parse(R"({"tolerances": {"dtn": -0.1}})")), SchemaError);
}

TEST(ParseConfig, CommandRouting)
{
    EXPECT_THROW(parse_config("sweep", Json::parse(R"({"command": "solve"})")), SchemaError);
    EXPECT_THROW(parse_config("validate", Json::parse(R"({})")), SchemaError);
    EXPECT_THROW(parse_config("validate", Json::parse(R"({"command": "validate"})")), SchemaError);
    EXPECT_THROW(parse_config("plot", Json::parse(R"({})")), SchemaError);
    const auto cfg = parse_config("validate", Json::parse(R"({"command": "classify", "cases": [{"n": 3, "rule": {"kind": "power", "scale": 1, "exponent": 4}}]})"));
    EXPECT_EQ(cfg.target, "classify");
    EXPECT_TRUE(std::holds_alternative<ClassifyCommand>(cfg.body));
}

TEST(ParseConfig, SeedOverride)
{
    const auto doc = Json::parse(R"({"command": "solve", "seed": 5})");
    EXPECT_EQ(parse_config("solve", doc).seed, 5u);
    EXPECT_EQ(parse_config("solve", doc, 99).seed, 99u);
    EXPECT_EQ(to_json(parse_config("solve", doc, 99))["seed"], 99u);
}

TEST(Validate, ModulePreconditionsBecomeSchemaErrors)
{
    EXPECT_THROW(validate(parse_config("sweep", Json::parse(R"({"N": 64, "eps": [0.25, 0.0625]})"))), SchemaError);
    EXPECT_THROW(validate(parse_config("solve", Json::parse(R"({"N": 8192})"))), SchemaError);
    EXPECT_THROW(validate(parse_config("solve", Json::parse(R"({"route": "kernel", "a": 2})"))), SchemaError);
    EXPECT_THROW(validate(parse_config("solve", Json::parse(R"({"region": {"lo": [-4], "hi": [1]}})"))), SchemaError);
    EXPECT_THROW(validate(parse_config("perforated", Json::parse(R"({"rule": {"kind": "power", "scale": 2, "exponent": 1}})"))),
                 SchemaError);
    EXPECT_THROW(validate(parse_config("extension", Json::parse(R"({"M": 3})"))), SchemaError);
    EXPECT_THROW(validate(parse_config("extension", Json::parse(R"({"Y": 4})"))), SchemaError);
}

TEST(Run, ConstantProfileSweepPassesWithZeroGaps)
{
    auto doc = small_sweep();
    doc["profile"] = Json::parse(R"({"a": {"kind": "constant", "value": 1.5}})");
    const auto res = run(parse_config("sweep", doc));
    EXPECT_EQ(res.code, ExitCode::pass);
    const auto j = Json::parse(file(res, "sweep.json"));
    EXPECT_EQ(j["verdict"]["energy_gap"].get<double>(), 0.0);
    const auto csv = file(res, "sweep.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Run, NegativeControlExitsOne)
{
    auto doc = small_sweep();
    doc["a_star_override"] = 2.0;
    const auto res = run(parse_config("sweep", doc));
    EXPECT_EQ(res.code, ExitCode::verdict_failed);
    const auto j = Json::parse(file(res, "sweep.json"));
    EXPECT_FALSE(j["verdict"]["ENERGY"].get<bool>());
    EXPECT_EQ(j["a_star_override"][0][0], 2.0);
}

TEST(Run, ClassifyExpectationMismatchExitsOne)
{
    const auto doc = Json::parse(R"({"cases": [{"n": 2, "rule": {"kind": "exponential", "scale": 1, "exponent": 2}, "expect": "vanishing"}]})");
    const auto res = run(parse_config("classify", doc));
    EXPECT_EQ(res.code, ExitCode::verdict_failed);
    const auto lines = file(res, "classify.jsonl");
    EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 1);
}

TEST(Run, SeedDrivesProbeVectors)
{
    const auto doc = Json::parse(R"({"N": 128, "band": 4})");
    const auto a = run(parse_config("extension", doc, 1));
    const auto b = run(parse_config("extension", doc, 1));
    const auto c = run(parse_config("extension", doc, 2));
    EXPECT_EQ(a.code, ExitCode::pass);
    for (std::size_t i = 0; i < a.files.size(); ++i) EXPECT_EQ(a.files[i].content, b.files[i].content) << a.files[i].name;
    EXPECT_NE(file(a, "extension_trace.csv"), file(c, "extension_trace.csv"));
}

TEST(Run, PerforatedReportsBothSweeps)
{
    const auto doc = Json::parse(R"({"N": 256, "eps": [0.25, 0.125, 0.0625], "corrector": {"eps": [0.25, 0.125]}})");
    const auto res = run(parse_config("perforated", doc));
    const auto j = Json::parse(file(res, "perforated.json"));
    EXPECT_TRUE(j["local"]["separated"].get<bool>());
    EXPECT_TRUE(j["corrector"]["pass"].get<bool>());
    EXPECT_FALSE(file(res, "perforated_local.csv").empty());
    EXPECT_FALSE(file(res, "corrector.csv").empty());
    EXPECT_EQ(res.code, j["dichotomy"].get<bool>() ? ExitCode::pass : ExitCode::verdict_failed);
}

TEST(EmitReport, EmptyResultsWriteManifestOnly)
{
    const auto dir = scratch("empty");
    const auto paths = emit_report({}, dir, "hash");
    ASSERT_EQ(paths.size(), 1u);
    EXPECT_EQ(paths[0].filename(), "MANIFEST");
    EXPECT_EQ(read_text(dir / "MANIFEST"), "config_sha256 hash\nfiles 0\n");
}

TEST(Invoke, ExitCodesAndManifest)
{
    const auto dir = scratch("invoke");
    EXPECT_EQ(invoke("sweep", dir / "missing.json", dir / "a", std::nullopt).code, ExitCode::schema_error);

    const auto bad = dir / "bad.json";
    std::ofstream(bad) << "{ not json";
    const auto inv = invoke("sweep", bad, dir / "b", std::nullopt);
    EXPECT_EQ(inv.code, ExitCode::schema_error);
    ASSERT_EQ(inv.written.size(), 1u);
    EXPECT_NE(read_text(dir / "b" / "MANIFEST").find(sha256_hex("{ not json")), std::string::npos);

    auto doc = small_sweep();
    doc["unexpected"] = 1;
    EXPECT_EQ(invoke("sweep", write_config(dir, doc), dir / "c", std::nullopt).code, ExitCode::schema_error);
}

TEST(Invoke, RerunIsByteIdentical)
{
    const auto dir = scratch("rerun");
    const auto cfg = write_config(dir, small_sweep());
    const auto first = invoke("sweep", cfg, dir / "one", std::nullopt);
    const auto second = invoke("sweep", cfg, dir / "two", std::nullopt);
    ASSERT_EQ(first.code, ExitCode::pass);
    ASSERT_EQ(first.written.size(), second.written.size());
    for (std::size_t i = 0; i < first.written.size(); ++i)
        EXPECT_EQ(read_text(first.written[i]), read_text(second.written[i])) << first.written[i];
    const auto manifest_text = read_text(dir / "one" / "MANIFEST");
    EXPECT_NE(manifest_text.find("sweep.csv " + sha256_hex(read_text(dir / "one" / "sweep.csv"))), std::string::npos);
    EXPECT_EQ(manifest_text.rfind("config_sha256 " + sha256_hex(read_text(cfg)), 0), 0u);
}
