#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <map>
#include <random>
#include <set>

#include "taskmill/paramspace.hpp"

#include "test_util.hpp"

using namespace taskmill;
using testutil::TempDir;
using testutil::write_file;

namespace {

using Assignment = std::map<std::string, std::string>;

// Independent enumeration oracle: explicit nested loops over plain value
// lists, leftmost variable outermost. Deliberately does not share any code
// with ParameterSource::expand.
std::vector<Assignment> nested_loop_oracle(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& lists) {
    std::vector<Assignment> out{Assignment{}};
    for (const auto& [var, values] : lists) {
        std::vector<Assignment> next;
        for (const auto& base : out) {
            for (const auto& v : values) {
                auto a = base;
                a[var] = v;
                next.push_back(a);
            }
        }
        out = next;
    }
    return out;
}

// Resolver over plain in-memory option texts.
class MapResolver : public SourceResolver {
public:
    explicit MapResolver(std::map<std::string, std::string> vars) : vars_(std::move(vars)) {}
    std::optional<std::string> variable_text(const std::string& name) override {
        auto it = vars_.find(ConfigView::canon(name));
        if (it == vars_.end()) return std::nullopt;
        return it->second;
    }
    SourcePtr section_space(const std::string&) override { throw UnknownSection("none"); }

private:
    std::map<std::string, std::string> vars_;
};

std::vector<ParameterPoint> sweep_points(const std::string& conf_text) {
    TempDir dir;
    write_file(dir / "HelloWorld.conf", testutil::kHelloConf);
    auto path = write_file(dir / "sweep.conf", conf_text);
    auto view = parse_config({path});
    auto source = build_space_source(view);
    REQUIRE(source);
    return enumerate(*source);
}

std::string value_of(const ParameterPoint& p, const std::string& var) {
    auto it = p.values.find(var);
    return it == p.values.end() ? std::string() : it->second;
}

} // namespace

TEST_CASE("parse_values recognizes the three shapes", "[paramspace]") {
    SECTION("tuple list") {
        auto src = parse_values("(1, 1) (2, 1) (1, 2)", {"MUR", "MUF"});
        auto* tuples = dynamic_cast<const TupleListSource*>(src.get());
        REQUIRE(tuples);
        REQUIRE(tuples->tuples().size() == 3);
        CHECK(tuples->tuples()[1] == std::vector<std::string>{"2", "1"});
    }
    SECTION("single value") {
        auto src = parse_values("0.5", {"MUF"});
        auto* list = dynamic_cast<const ValueListSource*>(src.get());
        REQUIRE(list);
        CHECK(list->values() == std::vector<std::string>{"0.5"});
    }
    SECTION("lookup rules") {
        auto src = parse_values("def\n2 => x y", {"VAR"});
        auto* lookup = dynamic_cast<const LookupSource*>(src.get());
        REQUIRE(lookup);
        CHECK(lookup->default_values() == std::vector<std::string>{"def"});
        REQUIRE(lookup->rules().size() == 1);
        CHECK(lookup->rules()[0].first == "2");
        CHECK(lookup->rules()[0].second == std::vector<std::string>{"x", "y"});
    }
    SECTION("malformed input") {
        CHECK_THROWS_AS(parse_values("(1, 1) (2)", {"A", "B"}), MalformedTuple);
        CHECK_THROWS_AS(parse_values("(1, 1", {"A", "B"}), MalformedTuple);
        CHECK_THROWS_AS(parse_values("x (1, 2)", {"A", "B"}), MalformedTuple);
        CHECK_THROWS_AS(parse_values("def\n2 => x\nbroken line", {"V"}), MalformedLookupRule);
    }
}

TEST_CASE("dsl parsing builds the expected tree", "[paramspace]") {
    MapResolver resolver({{"a", "1 2"},
                          {"b", "x y z"},
                          {"c", "only"},
                          {"(mur, muf)", "(1, 1) (2, 1) (1, 2)"},
                          {"var", "def\n2 => x y"}});

    SECTION("tuple cross lookup chained with section is rejected without sections") {
        CHECK_THROWS_AS(parse_dsl("{missing}", resolver), UnknownSection);
    }

    SECTION("tuple and lookup make a cross") {
        auto src = parse_dsl("(MUR,MUF) VAR[MUR]", resolver);
        auto* cross = dynamic_cast<const CrossSource*>(src.get());
        REQUIRE(cross);
        REQUIRE(cross->factors().size() == 2);
        CHECK(dynamic_cast<const TupleListSource*>(cross->factors()[0].get()));
        auto* lookup = dynamic_cast<const LookupSource*>(cross->factors()[1].get());
        REQUIRE(lookup);
        CHECK(lookup->key_var() == "MUR");
    }

    SECTION("single variable yields its value list") {
        auto src = parse_dsl("C", resolver);
        CHECK(enumerate(*src).size() == 1);
    }

    SECTION("'+' binds looser than juxtaposition") {
        auto src = parse_dsl("A B + C", resolver);
        auto* chain = dynamic_cast<const ChainSource*>(src.get());
        REQUIRE(chain);
        REQUIRE(chain->terms().size() == 2);
        CHECK(dynamic_cast<const CrossSource*>(chain->terms()[0].get()));

        // |A||B| + |C| with the parsed grouping; the alternate grouping
        // A (B + C) would give |A| * (|B| + |C|).
        auto points = enumerate(*src);
        CHECK(points.size() == 2 * 3 + 1);
        CHECK(points.size() != 2 * (3 + 1));
    }

    SECTION("errors carry positions") {
        try {
            parse_dsl("A ] B", resolver);
            FAIL("expected DslSyntaxError");
        } catch (const DslSyntaxError& e) {
            CHECK(e.position == 2);
        }
        CHECK_THROWS_AS(parse_dsl("", resolver), DslSyntaxError);
        CHECK_THROWS_AS(parse_dsl("A +", resolver), DslSyntaxError);
        CHECK_THROWS_AS(parse_dsl("(A,B", resolver), DslSyntaxError);
    }

    SECTION("lookups need their key defined to the left") {
        CHECK_THROWS_AS(parse_dsl("VAR[MUR]", resolver), LookupWithoutKey);
        CHECK_THROWS_AS(parse_dsl("A VAR[B]", resolver), LookupWithoutKey);
        CHECK_THROWS_AS(parse_dsl("VAR", resolver), LookupWithoutKey);
    }

    SECTION("plain list used as lookup gets defaults only") {
        auto src = parse_dsl("A C[A]", resolver);
        auto points = enumerate(*src);
        REQUIRE(points.size() == 2);
        CHECK(value_of(points[0], "C") == "only");
    }
}

TEST_CASE("sweep config enumerates the six golden points", "[paramspace]") {
    auto points = sweep_points(testutil::kSweepConf);
    REQUIRE(points.size() == 6);
    struct Row {
        const char* mur;
        const char* muf;
        const char* var;
    };
    const Row expected[6] = {{"1", "1", "def"}, {"2", "1", "x"},  {"2", "1", "y"},
                             {"1", "2", "def"}, {"1", "0.5", ""}, {"2", "0.5", ""}};
    for (int i = 0; i < 6; ++i) {
        INFO("row " << i);
        CHECK(value_of(points[i], "MUR") == expected[i].mur);
        CHECK(value_of(points[i], "MUF") == expected[i].muf);
        CHECK(value_of(points[i], "VAR") == expected[i].var);
    }

    // All six assignments are distinct, so all hashes must be too.
    std::set<std::string> hashes;
    for (const auto& p : points) hashes.insert(p.hash);
    CHECK(hashes.size() == 6);
}

TEST_CASE("cross products follow the nested-loop oracle", "[paramspace]") {
    SECTION("single by single") {
        MapResolver resolver({{"a", "a0"}, {"b", "b0"}});
        auto points = enumerate(*parse_dsl("A B", resolver));
        REQUIRE(points.size() == 1);
        CHECK(value_of(points[0], "A") == "a0");
        CHECK(value_of(points[0], "B") == "b0");
    }

    SECTION("3 x 4 grid, rightmost fastest") {
        MapResolver resolver({{"x", "1 2 3"}, {"y", "a b c d"}});
        auto points = enumerate(*parse_dsl("X Y", resolver));
        auto expected = nested_loop_oracle({{"X", {"1", "2", "3"}},
                                            {"Y", {"a", "b", "c", "d"}}});
        REQUIRE(points.size() == expected.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            INFO("point " << i);
            CHECK(points[i].values == expected[i]);
        }
    }

    SECTION("three factors") {
        MapResolver resolver({{"x", "1 2"}, {"y", "a b c"}, {"z", "q r"}});
        auto points = enumerate(*parse_dsl("X Y Z", resolver));
        auto expected = nested_loop_oracle(
            {{"X", {"1", "2"}}, {"Y", {"a", "b", "c"}}, {"Z", {"q", "r"}}});
        REQUIRE(points.size() == 12);
        for (std::size_t i = 0; i < points.size(); ++i) CHECK(points[i].values == expected[i]);
    }
}

TEST_CASE("lookup expansion and chain composition", "[paramspace]") {
    MapResolver resolver({{"k", "1 2 3"}, {"v", "def\n2 => x y\n3 =>"}, {"w", "solo"}});

    SECTION("rules in order, no match means default, empty rule kills the branch") {
        auto points = enumerate(*parse_dsl("K V[K]", resolver));
        // K=1 -> def; K=2 -> x, y; K=3 -> empty rule, no points.
        REQUIRE(points.size() == 3);
        CHECK(value_of(points[0], "V") == "def");
        CHECK(value_of(points[1], "V") == "x");
        CHECK(value_of(points[2], "V") == "y");
    }

    SECTION("chain keeps order and leaves absent variables empty") {
        auto points = enumerate(*parse_dsl("K + W", resolver));
        REQUIRE(points.size() == 4);
        CHECK(value_of(points[0], "K") == "1");
        CHECK(value_of(points[3], "W") == "solo");
        CHECK(value_of(points[3], "K") == "");
        CHECK(points[3].values.count("K") == 0);
    }
}

TEST_CASE("requirement variables leave the value map", "[paramspace]") {
    MapResolver resolver({{"a", "1 2"}, {"walltime", "1:00 2:30"}, {"memory", "2000"}});
    auto points = enumerate(*parse_dsl("A WALLTIME MEMORY", resolver));
    REQUIRE(points.size() == 4);
    CHECK(points[0].requirements.walltime_s == 3600);
    CHECK(points[1].requirements.walltime_s == 9000);
    CHECK(points[0].requirements.memory_mb == 2000);
    CHECK(points[0].values.count("WALLTIME") == 0);

    // Requirements do not feed the hash: points 0 and 1 differ only in
    // wall time and must collide.
    CHECK(points[0].hash == points[1].hash);
    CHECK(points[0].hash != points[2].hash); // A differs
}

TEST_CASE("point hashes ignore empty values and map order", "[paramspace]") {
    ParameterPoint a;
    a.values = {{"X", "1"}, {"Y", ""}};
    ParameterPoint b;
    b.values = {{"X", "1"}};
    CHECK(point_hash(a) == point_hash(b));

    ParameterPoint c = b;
    c.partition_id = 3;
    CHECK(point_hash(c) != point_hash(b));
}

TEST_CASE("diffing retains, disables and appends", "[paramspace]") {
    auto before = sweep_points(testutil::kSweepConf);
    SpaceSnapshot snap;
    for (std::size_t i = 0; i < before.size(); ++i)
        snap.entries.push_back({static_cast<std::int64_t>(i), before[i].hash, before[i].values});
    snap.max_job_id = 5;

    SECTION("golden edit: MUR -> 0.5 1") {
        auto after = sweep_points(testutil::kSweepConfChanged);
        auto diff = diff_spaces(snap, after);

        REQUIRE(diff.disabled == std::vector<std::int64_t>{5});
        REQUIRE(diff.appended.size() == 1);
        CHECK(diff.appended[0].first == 6);
        const auto& appended = after[diff.appended[0].second];
        CHECK(value_of(appended, "MUR") == "0.5");
        CHECK(value_of(appended, "MUF") == "0.5");
        for (std::int64_t id = 0; id < 5; ++id) CHECK(diff.assignments.count(id) == 1);

        // Job 4 (1, 0.5) must now map onto the point enumerated last.
        CHECK(diff.assignments.at(4) == 5);

        auto next = apply_diff(snap, after, diff);
        CHECK(next.max_job_id == 6);
        REQUIRE(next.entries.size() == 7);
        CHECK(next.entries[6].job_id == 6);
    }

    SECTION("identical space is a fixpoint") {
        auto diff = diff_spaces(snap, before);
        CHECK(diff.disabled.empty());
        CHECK(diff.appended.empty());
        for (std::size_t i = 0; i < before.size(); ++i)
            CHECK(diff.assignments.at(static_cast<std::int64_t>(i)) == i);
    }

    SECTION("empty old space appends everything from id 0") {
        auto diff = diff_spaces(SpaceSnapshot{}, before);
        REQUIRE(diff.appended.size() == 6);
        CHECK(diff.appended.front().first == 0);
        CHECK(diff.appended.back().first == 5);
    }

    SECTION("ids are never reused across A -> B -> A") {
        auto b_points = sweep_points(testutil::kSweepConfChanged);
        auto d1 = diff_spaces(snap, b_points);
        auto snap_b = apply_diff(snap, b_points, d1);
        auto d2 = diff_spaces(snap_b, before);
        // the B-only point (job 6) goes away, the A-only point returns as job 7
        REQUIRE(d2.disabled == std::vector<std::int64_t>{6});
        REQUIRE(d2.appended.size() == 1);
        CHECK(d2.appended[0].first == 7);
    }

    SECTION("duplicate hashes match by multiplicity") {
        SpaceSnapshot dup;
        ParameterPoint p;
        p.values = {{"A", "1"}};
        p.hash = point_hash(p);
        dup.entries = {{0, p.hash, p.values}, {1, p.hash, p.values}};
        dup.max_job_id = 1;
        auto diff = diff_spaces(dup, {p});
        CHECK(diff.assignments.at(0) == 0);
        CHECK(diff.disabled == std::vector<std::int64_t>{1});
        CHECK(diff.appended.empty());
    }
}

TEST_CASE("snapshots round-trip through disk", "[paramspace]") {
    TempDir dir;
    auto points = sweep_points(testutil::kSweepConf);
    SpaceSnapshot snap;
    for (std::size_t i = 0; i < points.size(); ++i)
        snap.entries.push_back({static_cast<std::int64_t>(i), points[i].hash, points[i].values});
    snap.max_job_id = 5;

    auto path = dir / "space.snap";
    persist_snapshot(snap, path);
    CHECK(load_snapshot(path) == snap);

    SECTION("awkward characters survive the encoding") {
        SpaceSnapshot tricky;
        tricky.entries.push_back(
            {0, std::string(16, 'a'),
             {{"A", "a b&c=d%e"}, {"B", "line1\nline2"}, {"C", ""}}});
        tricky.max_job_id = 0;
        persist_snapshot(tricky, path);
        CHECK(load_snapshot(path) == tricky);
    }

    SECTION("truncation is rejected") {
        auto text = read_file(path);
        write_file(path, text.substr(0, text.size() / 2));
        CHECK_THROWS_AS(load_snapshot(path), CorruptSnapshot);
    }

    SECTION("non-increasing ids are rejected") {
        write_file(path, "version 1\n3 0123456789abcdef A=1\n2 0123456789abcdef A=2\n");
        CHECK_THROWS_AS(load_snapshot(path), CorruptSnapshot);
        write_file(path, "no header\n");
        CHECK_THROWS_AS(load_snapshot(path), CorruptSnapshot);
    }
}

TEST_CASE("large snapshots load in roughly linear time", "[paramspace]") {
    TempDir dir;
    auto make = [&](int n, const std::filesystem::path& path) {
        SpaceSnapshot snap;
        snap.entries.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            ParameterPoint p;
            p.values = {{"I", std::to_string(i)}, {"PAYLOAD", "value_" + std::to_string(i * 7)}};
            snap.entries.push_back({i, point_hash(p), p.values});
        }
        snap.max_job_id = n - 1;
        persist_snapshot(snap, path);
    };
    auto timed_load = [&](const std::filesystem::path& path) {
        auto t0 = std::chrono::steady_clock::now();
        auto snap = load_snapshot(path);
        auto t1 = std::chrono::steady_clock::now();
        REQUIRE(!snap.entries.empty());
        return std::chrono::duration<double>(t1 - t0).count();
    };

    make(30000, dir / "small.snap");
    make(300000, dir / "large.snap");
    timed_load(dir / "small.snap"); // warm caches
    auto t_small = timed_load(dir / "small.snap");
    auto t_large = timed_load(dir / "large.snap");
    INFO("30k: " << t_small << "s, 300k: " << t_large << "s");
    // 10x the entries should cost clearly less than quadratic growth.
    CHECK(t_large < 30.0 * std::max(t_small, 1e-4));
}
