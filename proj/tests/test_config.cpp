#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "taskmill/config.hpp"

#include "test_util.hpp"

using namespace taskmill;
using testutil::TempDir;
using testutil::write_file;

TEST_CASE("hello config parses into scoped options", "[config]") {
    auto view = parse_config_text(testutil::kHelloConf, "hello.conf");
    CHECK(view.find("global", "task") == "UserTask");
    CHECK(view.find("global", "backend") == "local");
    CHECK(view.find("jobs", "jobs") == "2");
    CHECK(view.find("jobs", "wall time") == "1:00");
    CHECK(view.find("usertask", "executable") == "Example.sh");
}

TEST_CASE("empty file yields empty view", "[config]") {
    TempDir dir;
    auto path = write_file(dir / "empty.conf", "");
    auto view = parse_config({path});
    CHECK(view.entries().empty());
}

TEST_CASE("includes merge depth-first in textual order", "[config]") {
    TempDir dir;
    write_file(dir / "base.conf", "[jobs]\njobs = 5\n");

    SECTION("option set after the include wins") {
        auto a = write_file(dir / "a.conf",
                            "[global] include = base.conf\n[jobs]\njobs = 2\n");
        auto view = parse_config({a});
        CHECK(view.find("jobs", "jobs") == "2");
        CHECK(view.entry("jobs", "jobs")->source.find("a.conf") != std::string::npos);
    }

    SECTION("option set before the include is overridden by it") {
        auto a = write_file(dir / "a.conf",
                            "[jobs]\njobs = 2\n[global] include = base.conf\n");
        auto view = parse_config({a});
        CHECK(view.find("jobs", "jobs") == "5");
        CHECK(view.entry("jobs", "jobs")->source.find("base.conf") != std::string::npos);
    }

    SECTION("relative include resolves against the including file") {
        write_file(dir / "sub" / "inner.conf", "[x]\nk = v\n");
        auto a = write_file(dir / "sub" / "outer.conf", "[global]\ninclude = inner.conf\n");
        auto view = parse_config({a});
        CHECK(view.find("x", "k") == "v");
    }
}

TEST_CASE("include cycles are detected", "[config]") {
    TempDir dir;
    write_file(dir / "a.conf", "[global]\ninclude = b.conf\n");
    write_file(dir / "b.conf", "[global]\ninclude = a.conf\n");
    CHECK_THROWS_AS(parse_config({dir / "a.conf"}), IncludeCycle);
}

TEST_CASE("missing files are reported", "[config]") {
    CHECK_THROWS_AS(parse_config({"/nonexistent/nowhere.conf"}), MissingFile);
    TempDir dir;
    auto a = write_file(dir / "a.conf", "[global]\ninclude = gone.conf\n");
    CHECK_THROWS_AS(parse_config({a}), MissingFile);
}

TEST_CASE("bad lines raise syntax errors with location", "[config]") {
    TempDir dir;
    auto a = write_file(dir / "a.conf", "[s]\nk = v\nthis is not an option\n");
    try {
        parse_config({a});
        FAIL("expected SyntaxError");
    } catch (const SyntaxError& e) {
        CHECK(e.line == 3);
        CHECK(std::string(e.what()).find("a.conf") != std::string::npos);
    }

    auto b = write_file(dir / "b.conf", "  indented = first\n");
    CHECK_THROWS_AS(parse_config({b}), SyntaxError);

    auto c = write_file(dir / "c.conf", "[unterminated\n");
    CHECK_THROWS_AS(parse_config({c}), SyntaxError);
}

TEST_CASE("continuations, comments and CRLF", "[config]") {
    auto view = parse_config_text("[s]\r\nkey = first ; trailing comment\r\n"
                                  "  second line ; another\r\n"
                                  "\r\n"
                                  "other = x\r\n");
    CHECK(view.find("s", "key") == "first\nsecond line");
    CHECK(view.find("s", "other") == "x");
}

TEST_CASE("section and key lookup is case-insensitive with squashed spaces", "[config]") {
    auto view = parse_config_text("[Jobs]\nWall  Time = 1:00\n");
    CHECK(view.find("JOBS", "wall time") == "1:00");
    CHECK(view.find("jobs", "WALL   TIME") == "1:00");
}

TEST_CASE("cli overrides rank above files", "[config]") {
    TempDir dir;
    auto a = write_file(dir / "a.conf", "[jobs]\njobs = 2\n");
    auto view = parse_config({a}, {"jobs.jobs=7", "Jobs.wall time=2:00"});
    CHECK(view.find("jobs", "jobs") == "7");
    CHECK(view.entry("jobs", "jobs")->source == "cli-override");
    CHECK(view.find("jobs", "wall time") == "2:00");
    CHECK_THROWS_AS(parse_config({a}, {"notanoverride"}), ConfigError);
}

TEST_CASE("scoped lookup walks the chain and falls back to defaults", "[config]") {
    auto view = parse_config_text(testutil::kHelloConf, "hello.conf");
    std::vector<std::string> task_scope{"usertask", "global"};
    CHECK(view.get(task_scope, "executable") == "Example.sh");

    std::vector<std::string> jobs_scope{"jobs"};
    CHECK(view.get(jobs_scope, "absent", "x") == "x");
    CHECK_THROWS_AS(view.get(jobs_scope, "absent"), MissingOption);
}

TEST_CASE("sweep config exposes the parameter sections", "[config]") {
    TempDir dir;
    write_file(dir / "HelloWorld.conf", testutil::kHelloConf);
    auto path = write_file(dir / "sweep.conf", testutil::kSweepConf);
    auto view = parse_config({path});

    std::vector<std::string> scope{"pspace1", "parameters"};
    CHECK(view.get(scope, "mur") == "1 2");
    CHECK(view.find("parameters", "VAR") == "def\n2 => x y");
    CHECK(view.find("parameters", "(mur, muf)") == "(1, 1) (2, 1) (1, 2)");
    CHECK(view.find("jobs", "jobs") == "2"); // pulled in by the include
}

TEST_CASE("fingerprints ignore formatting but track values", "[config]") {
    auto a = parse_config_text("[s]\nk1 = v1 ; comment\nk2 = v2\n[t]\nx = y\n");
    auto b = parse_config_text("[T]\nX = y\n[s]\nK2 = v2\nk1   =   v1\n");
    CHECK(fingerprint(a) == fingerprint(b));
    CHECK(fingerprint(a, {"s"}) == fingerprint(b, {"s"}));

    auto c = parse_config_text("[s]\nk1 = v1\nk2 = other\n[t]\nx = y\n");
    CHECK(fingerprint(a) != fingerprint(c));
    CHECK(fingerprint(a, {"s"}) != fingerprint(c, {"s"}));
    CHECK(fingerprint(a, {"t"}) == fingerprint(c, {"t"}));

    // MUR value edit must change the parameter-section digest.
    auto before = parse_config_text("[pspace1]\nMUR = 1 2\n");
    auto after = parse_config_text("[pspace1]\nMUR = 0.5 1\n");
    CHECK(fingerprint(before, {"pspace1"}) != fingerprint(after, {"pspace1"}));

    // Empty scope is a fixed sentinel.
    CHECK(fingerprint(a, {}) == fingerprint(c, {}));
    CHECK(fingerprint(a, {"missing"}) == fingerprint(c, {}));
}

TEST_CASE("canonical serialization round-trips", "[config]") {
    TempDir dir;
    write_file(dir / "HelloWorld.conf", testutil::kHelloConf);
    auto path = write_file(dir / "sweep.conf", testutil::kSweepConf);
    auto view = parse_config({path});

    auto reparsed = parse_config_text(view.canonical_ini());
    REQUIRE(reparsed.entries().size() == view.entries().size());
    for (const auto& e : view.entries()) {
        auto v = reparsed.find(e.section, e.key);
        REQUIRE(v.has_value());
        CHECK(*v == e.value);
    }
    CHECK(fingerprint(view) == fingerprint(reparsed));
}

TEST_CASE("canonical round-trip holds for generated configs", "[config]") {
    std::mt19937 rng(20240811);
    auto rand_word = [&](int len) {
        std::string w;
        for (int i = 0; i < len; ++i) w.push_back("abcXYZ019_"[rng() % 10]);
        return w;
    };
    for (int round = 0; round < 25; ++round) {
        std::string text;
        int sections = 1 + static_cast<int>(rng() % 3);
        for (int s = 0; s < sections; ++s) {
            text += "[" + rand_word(4) + std::to_string(s) + "]\n";
            int keys = 1 + static_cast<int>(rng() % 4);
            for (int k = 0; k < keys; ++k) {
                text += rand_word(5) + std::to_string(k) + " = " + rand_word(6);
                if (rng() % 3 == 0) text += "\n  " + rand_word(5); // continuation
                text += "\n";
            }
        }
        auto view = parse_config_text(text);
        auto reparsed = parse_config_text(view.canonical_ini());
        CHECK(fingerprint(view) == fingerprint(reparsed));
        CHECK(view.canonical_ini() == reparsed.canonical_ini());
    }
}

TEST_CASE("flat dump is sorted and stable", "[config]") {
    auto view = parse_config_text("[b]\nz = 1\na = 2\n[a]\nk = 3\n");
    CHECK(view.dump_flat() == "a.k = 3\nb.a = 2\nb.z = 1\n");
}
