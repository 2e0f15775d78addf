#ifndef OCSC_SCENARIO_HPP
#define OCSC_SCENARIO_HPP

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ocsc/agent.hpp"
#include "ocsc/orchestrator.hpp"

namespace ocsc {

/// Orchestrator target backed by an in-process mock agent. reset() tears the
/// agent down and serves a fresh one with identical options (same port,
/// same sandbox), capturing the bug id of the previous life.
class AgentTarget : public Target {
public:
    explicit AgentTarget(MockAgent::Options opts);

    std::string host() const override { return "127.0.0.1"; }
    uint16_t port() const override { return port_; }
    bool reset() override;
    std::string take_bug_id() override;

    MockAgent* agent() { return agent_.get(); }

private:
    MockAgent::Options opts_;
    std::unique_ptr<MockAgent> agent_;
    uint16_t port_ = 0;
    std::string pending_bug_;
};

struct ScenarioResult {
    std::string name;
    enum Verdict { VULNERABLE_REPRODUCED, BLOCKED, ERROR } verdict = ERROR;
    std::vector<std::string> evidence;
};

const char* to_string(ScenarioResult::Verdict v);

struct ScenarioOptions {
    std::filesystem::path workdir;  // sandbox roots are created below this
    bool restrict_script_web_deploy = false;
    bool require_version_upgrade = false;  // downgrade-scenario hardening toggle
    bool tamper_payload = false;           // downgrade-scenario digest check probe
    bool wrong_digest = false;             // script-scenario digest gate probe
    bool simulate_reconnect = true;        // profile-scenario reconnect step
};

/// Valid vendor-signed package, lower version than installed: accepted by
/// default (the missing version comparison), BLOCKED only when tampered or
/// when the hardening toggle is on.
ScenarioResult scenario_downgrade(const ScenarioOptions& opts);

/// Unauthenticated CAC-move of an attacker script over OnDisconnect plus a
/// disconnect frame; reproduced iff the agent records a would-execute event
/// for the attacker's path.
ScenarioResult scenario_script_overwrite(const ScenarioOptions& opts);

/// CAC-move (mode "0") replacing the profile with EnableScripting=true, a
/// simulated reconnect, then the script-overwrite chain.
ScenarioResult scenario_profile_overwrite(const ScenarioOptions& opts);

}  // namespace ocsc

#endif
