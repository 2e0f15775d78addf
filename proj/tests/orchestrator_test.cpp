#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "golden.hpp"
#include "ocsc/orchestrator.hpp"
#include "ocsc/scenario.hpp"

using namespace ocsc;
namespace fs = std::filesystem;

namespace {

Bytes golden_frame() {
    auto raw = from_hex(golden::kScriptDeployHex);
    REQUIRE(raw.has_value());
    return *raw;
}

Bytes with_body_len(Bytes frame, uint16_t body_len) {
    frame[kBodyLenOffset] = static_cast<uint8_t>(body_len & 0xff);
    frame[kBodyLenOffset + 1] = static_cast<uint8_t>(body_len >> 8);
    return frame;
}

struct TestBed {
    fs::path root;
    std::unique_ptr<AgentTarget> target;

    explicit TestBed(const std::string& tag, SeededBugs bugs = {}) {
        root = fs::temp_directory_path() / ("ocsc-orch-" + tag);
        fs::remove_all(root);
        fs::create_directories(root);
        MockAgent::Options opts;
        opts.policy.sandbox_root = root / "sandbox";
        opts.policy.listen_port = 0;
        opts.bugs = bugs;
        fs::create_directories(opts.policy.sandbox_root);
        target = std::make_unique<AgentTarget>(std::move(opts));
        REQUIRE(target->port() != 0);
    }
    ~TestBed() {
        target.reset();
        fs::remove_all(root);
    }
};

ExecTiming fast_timing() { return ExecTiming{200, 400, 20}; }

}  // namespace

TEST_CASE("normalize_lanes renumbers contiguously") {
    FuzzSequence seq;
    seq.steps = {{7, {1}, 0}, {3, {2}, 0}, {7, {3}, 0}};
    auto n = normalize_lanes(seq);
    CHECK(n.steps[0].lane == 1);
    CHECK(n.steps[1].lane == 0);
    CHECK(n.steps[2].lane == 1);
}

TEST_CASE("detection strings round trip") {
    for (auto d : {Detection::socket_closed, Detection::probe_failed, Detection::delayed_death}) {
        auto s = to_string(d);
        auto back = detection_from_string(s);
        REQUIRE(back.has_value());
        CHECK(*back == d);
    }
    CHECK(!detection_from_string("bogus").has_value());
}

TEST_CASE("execute_sequence: benign frame is ok") {
    TestBed bed("ok");
    FuzzSequence seq;
    seq.steps = {{0, golden_frame(), 0}};
    auto out = execute_sequence(seq, "127.0.0.1", bed.target->port(), fast_timing());
    CHECK(out.kind == Outcome::Kind::ok);
}

TEST_CASE("execute_sequence: B2 trigger is detected as a crash") {
    SeededBugs bugs;
    bugs.b2_double_free = true;
    TestBed bed("b2", bugs);
    FuzzSequence seq;
    seq.steps = {{0, with_body_len(golden_frame(), 0), 0}};
    auto out = execute_sequence(seq, "127.0.0.1", bed.target->port(), fast_timing());
    CHECK(out.crashed());
}

TEST_CASE("execute_sequence: B3 is a delayed death past the exec timeout") {
    SeededBugs bugs;
    bugs.b3_timed_heap = true;
    bugs.b3_timer_ms = 400;
    TestBed bed("b3", bugs);
    FuzzSequence seq;
    seq.steps = {{0, with_body_len(golden_frame(), 6), 0}};
    ExecTiming timing{150, 1500, 25};
    auto out = execute_sequence(seq, "127.0.0.1", bed.target->port(), timing);
    CHECK(out.kind == Outcome::Kind::delayed_death);
    CHECK(out.latency_ms >= 150);
}

TEST_CASE("campaign config file loads and validates") {
    auto path = fs::temp_directory_path() / "ocsc-campaign.cfg";
    {
        std::ofstream out(path);
        out << "# comment\n"
               "max_execs=123\n"
               "exec_timeout_ms=50\n"
               "window_ms=100\n"
               "lanes=2\n"
               "parallel=true\n"
               "rng_seed=99\n";
    }
    auto cfg = load_campaign_config(path);
    REQUIRE(cfg.ok());
    CHECK(cfg.value().max_execs == 123);
    CHECK(cfg.value().timing.exec_timeout_ms == 50);
    CHECK(cfg.value().lanes == 2);
    CHECK(cfg.value().parallel);
    CHECK(cfg.value().rng_seed == 99);

    {
        std::ofstream out(path);
        out << "no_such_key=1\n";
    }
    CHECK(!load_campaign_config(path).ok());

    {
        std::ofstream out(path);
        out << "exec_timeout_ms=500\nwindow_ms=100\n";
    }
    CHECK(!load_campaign_config(path).ok());
    fs::remove(path);
}

TEST_CASE("crash reports round trip through files") {
    CrashReport report;
    report.sequence.steps = {{0, golden_frame(), 0}, {1, Bytes{1, 2, 3}, 25}};
    report.sequence.parallel = true;
    report.detection = Detection::delayed_death;
    report.latency_ms = 321;
    report.bug_id = "B3";
    report.timestamp_ms = 1234567;
    report.config_echo = {{"rng_seed", "7"}, {"lanes", "2"}};
    report.bucket = bucket(report);

    auto path = fs::temp_directory_path() / "ocsc-report.txt";
    write_report(report, path);
    auto back = read_report(path);
    REQUIRE(back.ok());
    CHECK(back.value().sequence == report.sequence);
    CHECK(back.value().detection == report.detection);
    CHECK(back.value().latency_ms == report.latency_ms);
    CHECK(back.value().bug_id == report.bug_id);
    CHECK(back.value().bucket == report.bucket);
    CHECK(back.value().config_echo == report.config_echo);
    fs::remove(path);
}

TEST_CASE("report files reject garbage") {
    auto path = fs::temp_directory_path() / "ocsc-bad-report.txt";
    std::ofstream(path) << "not a report\n";
    CHECK(!read_report(path).ok());
    fs::remove(path);
}

TEST_CASE("bucket prefers the target bug id, else hashes the shape") {
    CrashReport a;
    a.sequence.steps = {{0, golden_frame(), 0}};
    a.detection = Detection::socket_closed;
    a.bug_id = "B2";
    CHECK(bucket(a) == "B2");

    a.bug_id.clear();
    auto h1 = bucket(a);
    auto h2 = bucket(a);
    CHECK(h1 == h2);
    CHECK(!h1.empty());

    CrashReport b = a;
    b.detection = Detection::delayed_death;
    CHECK(bucket(b) != h1);
}

TEST_CASE("campaign finds and replays B2 from the golden seed") {
    SeededBugs bugs;
    bugs.b2_double_free = true;
    TestBed bed("campaign-b2", bugs);

    auto seeds = bed.root / "seeds";
    fs::create_directories(seeds);
    {
        auto frame = golden_frame();
        std::ofstream out(seeds / "golden.bin", std::ios::binary);
        out.write(reinterpret_cast<const char*>(frame.data()),
                  static_cast<std::streamsize>(frame.size()));
    }

    CampaignConfig cfg;
    cfg.host = "127.0.0.1";
    cfg.port = bed.target->port();
    cfg.seeds_dir = seeds.string();
    cfg.max_execs = 500;
    cfg.timing = fast_timing();
    cfg.stop_after_crashes = 1;
    cfg.report_dir = (bed.root / "reports").string();

    auto report = run_campaign(cfg, *bed.target);
    REQUIRE(report.ok());
    REQUIRE(report.value().crashes.size() >= 1);
    const auto& crash = report.value().crashes[0];
    CHECK(crash.bug_id == "B2");
    CHECK(crash.sequence.steps.size() == 1);

    // The written report replays against a fresh agent.
    fs::path report_file;
    for (const auto& entry : fs::directory_iterator(cfg.report_dir))
        report_file = entry.path();
    REQUIRE(!report_file.empty());
    auto loaded = read_report(report_file);
    REQUIRE(loaded.ok());
    auto rr = replay(loaded.value(), *bed.target, 3, cfg.timing);
    CHECK(rr.reproduced);
}

TEST_CASE("campaign against a bug-free agent reports no crashes") {
    TestBed bed("campaign-clean");
    CampaignConfig cfg;
    cfg.host = "127.0.0.1";
    cfg.port = bed.target->port();
    cfg.max_execs = 300;
    cfg.timing = fast_timing();
    auto report = run_campaign(cfg, *bed.target);
    REQUIRE(report.ok());
    CHECK(report.value().crashes.empty());
    CHECK(report.value().executions == 300);
}

TEST_CASE("campaign fails fast on an unreachable target") {
    ExternalTarget unreachable("127.0.0.1", 1, 100);
    CampaignConfig cfg;
    cfg.host = "127.0.0.1";
    cfg.port = 1;
    cfg.max_execs = 10;
    auto report = run_campaign(cfg, unreachable);
    REQUIRE(!report.ok());
    CHECK(report.error() == CampaignError::TargetUnreachable);
}

TEST_CASE("minimize: 20-step padded B2 sequence shrinks to one step") {
    SeededBugs bugs;
    bugs.b2_double_free = true;
    TestBed bed("min-b2", bugs);

    FuzzSequence padded;
    for (int i = 0; i < 19; ++i) padded.steps.push_back({0, golden_frame(), 0});
    padded.steps.push_back({0, with_body_len(golden_frame(), 0), 0});

    auto minimized = minimize(padded, *bed.target, fast_timing());
    REQUIRE(minimized.ok());
    CHECK(minimized.value().steps.size() == 1);
    CHECK(minimized.value().steps[0].frame == with_body_len(golden_frame(), 0));
}

TEST_CASE("minimize: B4 keeps the corruptor plus follower pair") {
    SeededBugs bugs;
    bugs.b4_alloc_after_corrupt = true;
    TestBed bed("min-b4", bugs);

    FuzzSequence seq;
    seq.steps.push_back({0, golden_frame(), 0});
    seq.steps.push_back({0, with_body_len(golden_frame(), 6), 0});  // corruptor
    seq.steps.push_back({0, golden_frame(), 0});                    // B4 fires here
    seq.steps.push_back({0, golden_frame(), 0});

    auto minimized = minimize(seq, *bed.target, fast_timing());
    REQUIRE(minimized.ok());
    REQUIRE(minimized.value().steps.size() == 2);
    CHECK(minimized.value().steps[0].frame == with_body_len(golden_frame(), 6));
    CHECK(minimized.value().steps[1].frame == golden_frame());
}

TEST_CASE("minimize refuses a non-crashing sequence") {
    TestBed bed("min-clean");
    FuzzSequence seq;
    seq.steps = {{0, golden_frame(), 0}};
    auto minimized = minimize(seq, *bed.target, fast_timing());
    REQUIRE(!minimized.ok());
    CHECK(minimized.error() == MinimizeError::NotCrashing);
}
