#ifndef OCSC_ORCHESTRATOR_HPP
#define OCSC_ORCHESTRATOR_HPP

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ocsc/bytes.hpp"
#include "ocsc/mutate.hpp"
#include "ocsc/net.hpp"
#include "ocsc/result.hpp"

namespace ocsc {

struct SequenceStep {
    int lane = 0;
    Bytes frame;
    int pre_delay_ms = 0;

    bool operator==(const SequenceStep&) const = default;
};

// The unit of crash reproduction: ordered frames with per-step timing.
// Lanes are numbered contiguously from 0; with `parallel` set, lanes send
// concurrently under a start barrier.
struct FuzzSequence {
    std::vector<SequenceStep> steps;
    bool parallel = false;

    bool operator==(const FuzzSequence&) const = default;
};

/// Renumbers step lanes to be contiguous from 0, preserving order.
FuzzSequence normalize_lanes(FuzzSequence seq);

enum class Detection { socket_closed, probe_failed, delayed_death };
const char* to_string(Detection d);
std::optional<Detection> detection_from_string(std::string_view s);

struct Outcome {
    enum class Kind { ok, socket_closed, probe_failed, delayed_death };
    Kind kind = Kind::ok;
    int64_t latency_ms = 0;

    bool crashed() const { return kind != Kind::ok; }
};

struct ExecTiming {
    int exec_timeout_ms = 1000;
    int window_ms = 5000;  // delayed-crash observation window, >= timeout
    int probe_interval_ms = 100;
};

struct CampaignConfig {
    std::string host = "127.0.0.1";
    uint16_t port = 29754;
    std::string seeds_dir;
    uint64_t max_execs = 10000;
    ExecTiming timing;
    int lanes = 1;
    int steps_per_exec = 1;
    bool parallel = false;
    bool structural = true;  // enqueue structural_candidates of parseable seeds
    uint64_t rng_seed = 1;
    int exec_delay_ms = 0;       // pacing between executions
    uint64_t stop_after_crashes = 0;  // 0 = run to max_execs
    std::string report_dir;
    bool minimize_bytes = false;

    std::map<std::string, std::string> echo() const;
};

/// Parses a flat key=value config file ('#' comments allowed); unknown keys
/// are an error.
Result<CampaignConfig, std::string> load_campaign_config(const std::filesystem::path& file);

struct CrashReport {
    FuzzSequence sequence;
    Detection detection = Detection::socket_closed;
    int64_t latency_ms = 0;
    std::string bug_id;  // target-reported, may be empty
    std::string bucket;
    int64_t timestamp_ms = 0;
    std::map<std::string, std::string> config_echo;
};

struct CampaignReport {
    uint64_t executions = 0;
    std::vector<CrashReport> crashes;
    std::set<std::string> buckets;
    double execs_per_sec = 0.0;
};

enum class CampaignError { TargetUnreachable };
enum class MinimizeError { NotCrashing };

// The campaign's view of the target: an endpoint it can bring back to a
// fresh listening state between attempts.
class Target {
public:
    virtual ~Target() = default;
    virtual std::string host() const = 0;
    virtual uint16_t port() const = 0;
    /// Fresh target state, listening. Blocks until reachable.
    virtual bool reset() = 0;
    /// Bug id reported by the target for the most recent crash, if any.
    virtual std::string take_bug_id() { return {}; }
};

/// External process target; reset() just waits for the port to come back
/// (assumes a supervised target that restarts itself).
class ExternalTarget : public Target {
public:
    ExternalTarget(std::string host, uint16_t port, int reset_timeout_ms = 5000)
        : host_(std::move(host)), port_(port), reset_timeout_ms_(reset_timeout_ms) {}
    std::string host() const override { return host_; }
    uint16_t port() const override { return port_; }
    bool reset() override;

private:
    std::string host_;
    uint16_t port_;
    int reset_timeout_ms_;
};

/// Sends the sequence, then watches the target for the observation window:
/// socket_closed when a lane connection died around the send, probe_failed
/// for death within the exec timeout, delayed_death after it.
Outcome execute_sequence(const FuzzSequence& seq, const std::string& host, uint16_t port,
                         const ExecTiming& timing);

Result<CampaignReport, CampaignError> run_campaign(const CampaignConfig& cfg, Target& target);

struct ReplayResult {
    bool reproduced = false;
    uint32_t attempts_used = 0;
};
ReplayResult replay(const CrashReport& report, Target& target, uint32_t attempts,
                    const ExecTiming& timing);

/// ddmin over steps (1-minimal at step granularity), then an optional byte
/// trim of each surviving frame. Every candidate runs against a freshly
/// reset target.
Result<FuzzSequence, MinimizeError> minimize(const FuzzSequence& seq, Target& target,
                                             const ExecTiming& timing,
                                             bool minimize_bytes = false);

/// Bucket key: the target-reported bug id when present, else a stable hash
/// of detection class and sequence shape.
std::string bucket(const CrashReport& report);

/// One report per file, structured text, frames hex-encoded.
void write_report(const CrashReport& report, const std::filesystem::path& file);
Result<CrashReport, std::string> read_report(const std::filesystem::path& file);

}  // namespace ocsc

#endif
