#ifndef OCSC_AGENT_HPP
#define OCSC_AGENT_HPP

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ocsc/codec.hpp"
#include "ocsc/result.hpp"

namespace ocsc {

struct AgentPolicy {
    bool restrict_script_web_deploy = false;  // RestrictScriptWebDeploy, off by default
    uint16_t listen_port = 29754;
    std::filesystem::path sandbox_root;
    std::filesystem::path script_dir;           // default <root>/script
    std::filesystem::path profile_dir;          // default <root>/profile
    std::filesystem::path allowed_temp_prefix;  // default <root>/tmp
    // Hardening toggle with no real-world counterpart: makes check_installer
    // reject version downgrades, documenting what the actual fix would be.
    bool require_version_upgrade = false;
};

struct SeededBugs {
    bool b1_race = false;              // concurrent dispatch from >= 2 connections
    bool b2_double_free = false;       // zero-length header on a frame carrying body
    bool b3_timed_heap = false;        // body_len 0x0006 corruptor, delayed death
    bool b4_alloc_after_corrupt = false;  // instant death on next frame once corrupted
    int b3_timer_ms = 2000;
};

enum class ServeError { PortInUse, BadSandbox };

enum class MoveReject { bad_digest, src_outside_temp, policy, dst_outside_sandbox };
struct MoveResult {
    bool moved = false;
    int mode = 0;  // 0755 or 0644 when moved
    MoveReject reason = MoveReject::bad_digest;
};

struct DeployedFile {
    std::string path;
    int mode;
    std::string digest_hex;
};

struct InstallerPackage {
    Bytes payload;
    std::string digest_hex;
    std::string signature;
    std::string version;
};

enum class InstallReject { bad_digest, bad_signature, downgrade };
struct InstallResult {
    bool accepted = false;
    InstallReject reason = InstallReject::bad_digest;
};

// Sanitized vulnerable-by-design stand-in for the privileged IPC agent.
// Every filesystem effect is confined to sandbox_root; a "crash" is a clean
// loop exit that closes all sockets, after a bug-id line hits the event log.
class MockAgent {
public:
    struct Options {
        AgentPolicy policy;
        SeededBugs bugs;
        WireProfile profile;
        bool supervisor = false;  // restart listening after a crash
        int restart_delay_ms = 200;
        std::string installed_version = "4.9";
        bool log_bug_ids = true;  // the real target has no such oracle
    };

    static Result<std::unique_ptr<MockAgent>, ServeError> serve(Options opts);
    ~MockAgent();

    MockAgent(const MockAgent&) = delete;
    MockAgent& operator=(const MockAgent&) = delete;

    void stop();
    bool alive() const;
    uint16_t port() const { return actual_port_; }
    const Options& options() const { return opts_; }

    // Deployment state machine, also reachable over the wire via CAC-move.
    MoveResult apply_cac_move(const DeployCommand& cmd);
    InstallResult check_installer(const InstallerPackage& pkg) const;
    void trigger_disconnect();
    bool reload_profile_on_reconnect();

    bool scripting_enabled() const;
    std::vector<DeployedFile> deployed_files() const;
    std::vector<std::string> event_log() const;
    std::string last_bug_id() const;
    std::filesystem::path event_log_path() const;

    /// Signature stub keyed to a built-in test key; stands in for the vendor
    /// signature check without real cryptographic identity.
    static std::string sign_package(const std::string& digest_hex);

private:
    explicit MockAgent(Options opts);
    bool bind_listener(ServeError& err);
    void main_loop();
    void run_instance();
    void handle_connection(uint64_t conn_id, int fd);
    void process_buffer(uint64_t conn_id, int fd, Bytes& buffer);
    void dispatch(uint64_t conn_id, int fd, const IpcHeader& header, ByteView body,
                  bool garbage_follows);
    void crash(const std::string& bug_id);
    void send_ack(int fd, uint8_t request_msg_id, const std::string& status);
    void log_event(const std::string& line);
    void reset_state();
    bool load_profile();

    Options opts_;
    uint16_t actual_port_ = 0;
    int listen_fd_ = -1;

    std::thread main_thread_;
    std::atomic<bool> stop_requested_{false};
    std::atomic<bool> crashed_{false};
    std::atomic<bool> listening_{false};

    mutable std::mutex mu_;
    std::condition_variable cv_;
    bool scripting_enabled_ = false;
    bool corrupt_heap_ = false;
    std::chrono::steady_clock::time_point corrupt_deadline_{};
    bool corrupt_deadline_armed_ = false;
    std::vector<DeployedFile> deployed_;
    std::vector<std::string> events_;
    std::string last_bug_;
    struct DispatchEntry {
        uint64_t conn_id;
        std::chrono::steady_clock::time_point at;
    };
    std::vector<DispatchEntry> dispatch_ledger_;

    std::mutex conn_mu_;
    std::map<uint64_t, int> conn_fds_;
    std::vector<std::thread> conn_threads_;
    uint64_t next_conn_id_ = 0;
};

}  // namespace ocsc

#endif
