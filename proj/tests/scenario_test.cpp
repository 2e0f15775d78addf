#include <doctest.h>

#include <filesystem>

#include "ocsc/scenario.hpp"

using namespace ocsc;
namespace fs = std::filesystem;

namespace {

ScenarioOptions make_opts(const std::string& tag) {
    ScenarioOptions opts;
    opts.workdir = fs::temp_directory_path() / ("ocsc-scn-" + tag);
    fs::remove_all(opts.workdir);
    fs::create_directories(opts.workdir);
    return opts;
}

bool has_evidence(const ScenarioResult& r, const std::string& needle) {
    for (const auto& e : r.evidence)
        if (e.find(needle) != std::string::npos) return true;
    return false;
}

}  // namespace

TEST_CASE("downgrade: signed older package is accepted by default") {
    auto opts = make_opts("downgrade");
    auto r = scenario_downgrade(opts);
    CHECK(r.verdict == ScenarioResult::VULNERABLE_REPRODUCED);
    fs::remove_all(opts.workdir);
}

TEST_CASE("downgrade: tampered payload is caught by the digest check") {
    auto opts = make_opts("downgrade-tamper");
    opts.tamper_payload = true;
    auto r = scenario_downgrade(opts);
    CHECK(r.verdict == ScenarioResult::BLOCKED);
    fs::remove_all(opts.workdir);
}

TEST_CASE("downgrade: version gate blocks when enabled") {
    auto opts = make_opts("downgrade-gate");
    opts.require_version_upgrade = true;
    auto r = scenario_downgrade(opts);
    CHECK(r.verdict == ScenarioResult::BLOCKED);
    fs::remove_all(opts.workdir);
}

TEST_CASE("script overwrite reproduces over the wire") {
    auto opts = make_opts("script");
    auto r = scenario_script_overwrite(opts);
    CHECK(r.verdict == ScenarioResult::VULNERABLE_REPRODUCED);
    CHECK(has_evidence(r, "would_execute"));
    fs::remove_all(opts.workdir);
}

TEST_CASE("script overwrite is blocked by RestrictScriptWebDeploy") {
    auto opts = make_opts("script-restrict");
    opts.restrict_script_web_deploy = true;
    auto r = scenario_script_overwrite(opts);
    CHECK(r.verdict == ScenarioResult::BLOCKED);
    fs::remove_all(opts.workdir);
}

TEST_CASE("profile overwrite flips scripting on and reproduces") {
    auto opts = make_opts("profile");
    auto r = scenario_profile_overwrite(opts);
    CHECK(r.verdict == ScenarioResult::VULNERABLE_REPRODUCED);
    CHECK(has_evidence(r, "would_execute"));
    fs::remove_all(opts.workdir);
}

TEST_CASE("profile overwrite without a reconnect does not arm scripting") {
    auto opts = make_opts("profile-noreconnect");
    opts.simulate_reconnect = false;
    auto r = scenario_profile_overwrite(opts);
    CHECK(r.verdict == ScenarioResult::BLOCKED);
    fs::remove_all(opts.workdir);
}

TEST_CASE("profile overwrite under the restrict policy is only partially mitigated") {
    auto opts = make_opts("profile-restrict");
    opts.restrict_script_web_deploy = true;
    auto r = scenario_profile_overwrite(opts);
    CHECK(r.verdict == ScenarioResult::BLOCKED);
    // The policy gates the script directory, not the profile directory: the
    // profile swap itself still lands.
    CHECK(has_evidence(r, "profile"));
    fs::remove_all(opts.workdir);
}
