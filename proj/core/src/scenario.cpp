#include "ocsc/scenario.hpp"

#include <fstream>

#include "ocsc/net.hpp"

namespace ocsc {

namespace fs = std::filesystem;

AgentTarget::AgentTarget(MockAgent::Options opts) : opts_(std::move(opts)) {
    reset();
}

bool AgentTarget::reset() {
    if (agent_) {
        if (!agent_->last_bug_id().empty()) pending_bug_ = agent_->last_bug_id();
        agent_->stop();
        agent_.reset();
    }
    if (port_ != 0) opts_.policy.listen_port = port_;  // keep the first-bound port
    auto served = MockAgent::serve(opts_);
    if (!served) return false;
    agent_ = std::move(served).value();
    port_ = agent_->port();
    return true;
}

std::string AgentTarget::take_bug_id() {
    if (agent_ && !agent_->last_bug_id().empty()) pending_bug_ = agent_->last_bug_id();
    return std::exchange(pending_bug_, {});
}

const char* to_string(ScenarioResult::Verdict v) {
    switch (v) {
        case ScenarioResult::VULNERABLE_REPRODUCED: return "VULNERABLE_REPRODUCED";
        case ScenarioResult::BLOCKED: return "BLOCKED";
        case ScenarioResult::ERROR: return "ERROR";
    }
    return "?";
}

namespace {

constexpr auto kAckTimeout = std::chrono::milliseconds(2000);
const char* kDownloaderPath = "/opt/cisco/anyconnect/bin/vpndownloader";

struct Sandbox {
    fs::path root;

    static Sandbox create(const fs::path& workdir, const std::string& name) {
        Sandbox sb;
        sb.root = workdir / name;
        fs::remove_all(sb.root);
        fs::create_directories(sb.root / "tmp");
        fs::create_directories(sb.root / "script");
        fs::create_directories(sb.root / "profile");
        return sb;
    }

    void write_profile(bool enable_scripting) const {
        std::ofstream out(root / "profile" / "client.xml");
        out << "<AnyConnectProfile>\n  <EnableScripting>"
            << (enable_scripting ? "true" : "false")
            << "</EnableScripting>\n</AnyConnectProfile>\n";
    }

    fs::path stage(const std::string& name, const std::string& content) const {
        fs::path p = root / "tmp" / name;
        std::ofstream out(p, std::ios::binary);
        out << content;
        return p;
    }
};

std::string file_digest(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return compute_digest(data, "sha1").value();
}

// Sends one frame and waits for the agent's ack; the scenarios stay
// deterministic because every step is confirmed before the next.
bool send_and_ack(TcpConn& conn, const IpcMessage& msg) {
    auto raw = serialize(msg);
    if (!raw || !conn.send_all(raw.value())) return false;
    auto header_raw = conn.recv_exact(IpcHeader::kHeaderSize, kAckTimeout);
    if (!header_raw) return false;
    auto header = parse_header(*header_raw);
    if (!header) return false;
    if (header.value().body_len > 0 &&
        !conn.recv_exact(header.value().body_len, kAckTimeout))
        return false;
    return true;
}

std::vector<std::string> grep_events(const MockAgent& agent, const std::string& needle) {
    std::vector<std::string> out;
    for (const auto& line : agent.event_log())
        if (line.find(needle) != std::string::npos) out.push_back(line);
    return out;
}

// Stages an attacker script, deploys it over OnDisconnect via CAC-move and
// fires the disconnect trigger. Shared by both escalation scenarios.
ScenarioResult run_script_attack(MockAgent& agent, const Sandbox& sandbox,
                                 const ScenarioOptions& opts, ScenarioResult result) {
    fs::path script = sandbox.stage("attacker_script", "#!/bin/sh\nid\n");
    DeployCommand cmd;
    cmd.reply_port = 37319;
    cmd.src_path = script.string();
    cmd.dst_path = (agent.options().policy.script_dir / "OnDisconnect").string();
    cmd.digest_hex = opts.wrong_digest ? std::string(40, '0') : file_digest(script);
    cmd.mode_flag = '1';

    auto conn = TcpConn::connect("127.0.0.1", agent.port(), std::chrono::milliseconds(500));
    if (!conn) {
        result.evidence.push_back("error: agent unreachable");
        return result;
    }
    auto move_msg = build_script_move(cmd, kDownloaderPath);
    if (!move_msg || !send_and_ack(*conn, move_msg.value())) {
        result.evidence.push_back("error: CAC-move not acknowledged");
        return result;
    }
    if (!send_and_ack(*conn, build_disconnect(cmd.reply_port, agent.options().profile))) {
        result.evidence.push_back("error: disconnect not acknowledged");
        return result;
    }

    auto would_exec = grep_events(agent, "event=would_execute path=" + cmd.dst_path);
    auto rejected = grep_events(agent, "event=rejected");
    if (!would_exec.empty()) {
        result.verdict = ScenarioResult::VULNERABLE_REPRODUCED;
        result.evidence.insert(result.evidence.end(), would_exec.begin(), would_exec.end());
    } else if (!rejected.empty()) {
        result.verdict = ScenarioResult::BLOCKED;
        result.evidence.insert(result.evidence.end(), rejected.begin(), rejected.end());
    } else {
        result.evidence.push_back("error: no would-execute event and no gate rejection");
    }
    return result;
}

MockAgent::Options agent_options(const Sandbox& sandbox, const ScenarioOptions& opts) {
    MockAgent::Options agent_opts;
    agent_opts.policy.sandbox_root = sandbox.root;
    agent_opts.policy.listen_port = 0;  // scenarios are self-contained
    agent_opts.policy.restrict_script_web_deploy = opts.restrict_script_web_deploy;
    agent_opts.policy.require_version_upgrade = opts.require_version_upgrade;
    return agent_opts;
}

}  // namespace

ScenarioResult scenario_downgrade(const ScenarioOptions& opts) {
    ScenarioResult result{"downgrade", ScenarioResult::ERROR, {}};
    Sandbox sandbox = Sandbox::create(opts.workdir, "scenario-downgrade");
    auto served = MockAgent::serve(agent_options(sandbox, opts));
    if (!served) {
        result.evidence.push_back("error: agent failed to start");
        return result;
    }
    auto agent = std::move(served).value();

    InstallerPackage pkg;
    pkg.payload = to_bytes("anyconnect-installer version=4.8");
    pkg.version = "4.8";  // older than the installed 4.9
    pkg.digest_hex = compute_digest(pkg.payload, "sha1").value();
    pkg.signature = MockAgent::sign_package(pkg.digest_hex);
    if (opts.tamper_payload) pkg.payload[0] ^= 0x01;

    InstallResult check = agent->check_installer(pkg);
    if (check.accepted) {
        result.verdict = ScenarioResult::VULNERABLE_REPRODUCED;
        result.evidence.push_back("installer " + pkg.version + " accepted while " +
                                  agent->options().installed_version + " is installed");
    } else {
        result.verdict = ScenarioResult::BLOCKED;
        const char* reason = check.reason == InstallReject::bad_digest      ? "bad_digest"
                             : check.reason == InstallReject::bad_signature ? "bad_signature"
                                                                            : "downgrade";
        result.evidence.push_back(std::string("installer rejected: ") + reason);
    }
    return result;
}

ScenarioResult scenario_script_overwrite(const ScenarioOptions& opts) {
    ScenarioResult result{"script-overwrite", ScenarioResult::ERROR, {}};
    Sandbox sandbox = Sandbox::create(opts.workdir, "scenario-script-overwrite");
    // Victim already runs with scripting enabled; the profile variant covers
    // the disabled case.
    sandbox.write_profile(true);
    auto served = MockAgent::serve(agent_options(sandbox, opts));
    if (!served) {
        result.evidence.push_back("error: agent failed to start");
        return result;
    }
    return run_script_attack(*served.value(), sandbox, opts, std::move(result));
}

ScenarioResult scenario_profile_overwrite(const ScenarioOptions& opts) {
    ScenarioResult result{"profile-overwrite", ScenarioResult::ERROR, {}};
    Sandbox sandbox = Sandbox::create(opts.workdir, "scenario-profile-overwrite");
    sandbox.write_profile(false);  // scripting starts disabled
    auto served = MockAgent::serve(agent_options(sandbox, opts));
    if (!served) {
        result.evidence.push_back("error: agent failed to start");
        return result;
    }
    auto& agent = *served.value();

    // Overwrite the profile via CAC-move with mode "0" (-rw-r--r--).
    fs::path evil_profile = sandbox.stage(
        "evil_profile.xml",
        "<AnyConnectProfile>\n  <EnableScripting>true</EnableScripting>\n"
        "</AnyConnectProfile>\n");
    DeployCommand cmd;
    cmd.reply_port = 37319;
    cmd.src_path = evil_profile.string();
    cmd.dst_path = (agent.options().policy.profile_dir / "client.xml").string();
    cmd.digest_hex = file_digest(evil_profile);
    cmd.mode_flag = '0';

    auto conn = TcpConn::connect("127.0.0.1", agent.port(), std::chrono::milliseconds(500));
    auto move_msg = build_script_move(cmd, kDownloaderPath);
    if (!conn || !move_msg || !send_and_ack(*conn, move_msg.value())) {
        result.evidence.push_back("error: profile CAC-move not acknowledged");
        return result;
    }
    bool overwritten = !grep_events(agent, "event=moved dst=" + cmd.dst_path).empty();
    if (overwritten)
        result.evidence.push_back("profile overwritten with EnableScripting=true (mode 0644)");

    // The new profile only takes effect when it is read again.
    if (opts.simulate_reconnect) {
        agent.reload_profile_on_reconnect();
        result.evidence.push_back(std::string("reconnect: scripting now ") +
                                  (agent.scripting_enabled() ? "active" : "inactive"));
    }

    result = run_script_attack(agent, sandbox, opts, std::move(result));
    result.name = "profile-overwrite";
    if (result.verdict == ScenarioResult::BLOCKED && overwritten)
        result.evidence.push_back(
            "partial mitigation: script deployment blocked, profile overwrite still possible");
    if (result.verdict == ScenarioResult::ERROR && !agent.scripting_enabled()) {
        // The chain ran to completion but the agent never armed scripting:
        // the planted script stays inert, so the escalation is blocked.
        result.verdict = ScenarioResult::BLOCKED;
        result.evidence.push_back(opts.simulate_reconnect
                                      ? "blocked: scripting never enabled"
                                      : "blocked: profile is only re-read on reconnect");
    }
    return result;
}

}  // namespace ocsc
