#include "ocsc/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <barrier>
#include <deque>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "ocsc/codec.hpp"

namespace ocsc {

namespace {

using Clock = std::chrono::steady_clock;

int64_t ms_since(Clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
}

int64_t wall_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

void sleep_ms(int64_t ms) {
    if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
}

int lane_count(const FuzzSequence& seq) {
    int max_lane = 0;
    for (const auto& s : seq.steps) max_lane = std::max(max_lane, s.lane);
    return max_lane + 1;
}

// Sends all steps over per-lane connections. Returns false if any lane
// failed to connect; eof_out reports a peer close seen around the send.
bool send_steps(const FuzzSequence& seq, const std::string& host, uint16_t port,
                std::chrono::milliseconds eof_wait, bool& eof_out) {
    eof_out = false;
    int lanes = lane_count(seq);
    std::vector<TcpConn> conns;
    conns.reserve(lanes);
    for (int i = 0; i < lanes; ++i) {
        auto c = TcpConn::connect(host, port, std::chrono::milliseconds(500));
        if (!c) return false;
        conns.push_back(std::move(*c));
    }

    std::atomic<bool> send_failed{false};
    if (seq.parallel && lanes > 1) {
        std::barrier barrier(lanes);
        std::vector<std::thread> threads;
        for (int lane = 0; lane < lanes; ++lane) {
            threads.emplace_back([&, lane] {
                barrier.arrive_and_wait();
                for (const auto& step : seq.steps) {
                    if (step.lane != lane) continue;
                    sleep_ms(step.pre_delay_ms);
                    if (!conns[lane].send_all(step.frame)) send_failed = true;
                }
            });
        }
        for (auto& t : threads) t.join();
    } else {
        for (const auto& step : seq.steps) {
            sleep_ms(step.pre_delay_ms);
            if (!conns[step.lane].send_all(step.frame)) send_failed = true;
        }
    }

    for (auto& c : conns)
        if (c.peer_closed(eof_wait)) eof_out = true;
    if (send_failed) eof_out = true;
    for (auto& c : conns) c.abort_close();
    return true;
}

std::string frame_fingerprint(const Bytes& frame) {
    std::ostringstream os;
    auto header = parse_header(frame);
    if (header) {
        const auto& h = header.value();
        os << "t" << int(h.msg_type) << "i" << int(h.msg_id) << "h" << h.header_len << "b";
        if (h.body_len == 0 || h.body_len == 6 || h.body_len == 0xffff)
            os << h.body_len;
        else
            os << "n";
        os << "x" << (frame.size() > IpcHeader::kHeaderSize + size_t(h.body_len) ? "over"
                      : frame.size() < IpcHeader::kHeaderSize + size_t(h.body_len) ? "under"
                                                                                   : "exact");
    } else {
        os << "raw" << to_string(header.error());
    }
    return os.str();
}

}  // namespace

const char* to_string(Detection d) {
    switch (d) {
        case Detection::socket_closed: return "socket_closed";
        case Detection::probe_failed: return "probe_failed";
        case Detection::delayed_death: return "delayed_death";
    }
    return "?";
}

std::optional<Detection> detection_from_string(std::string_view s) {
    if (s == "socket_closed") return Detection::socket_closed;
    if (s == "probe_failed") return Detection::probe_failed;
    if (s == "delayed_death") return Detection::delayed_death;
    return std::nullopt;
}

FuzzSequence normalize_lanes(FuzzSequence seq) {
    std::map<int, int> remap;
    for (const auto& s : seq.steps)
        remap.emplace(s.lane, 0);
    int next = 0;
    for (auto& [old_lane, new_lane] : remap) new_lane = next++;
    for (auto& s : seq.steps) s.lane = remap[s.lane];
    if (remap.size() < 2) seq.parallel = false;
    return seq;
}

bool ExternalTarget::reset() {
    auto deadline = Clock::now() + std::chrono::milliseconds(reset_timeout_ms_);
    while (Clock::now() < deadline) {
        if (probe_liveness(host_, port_)) return true;
        sleep_ms(20);
    }
    return false;
}

Outcome execute_sequence(const FuzzSequence& seq, const std::string& host, uint16_t port,
                         const ExecTiming& timing) {
    bool eof = false;
    if (!send_steps(seq, host, port, std::chrono::milliseconds(30), eof))
        return {Outcome::Kind::probe_failed, 0};
    const auto sent_at = Clock::now();
    if (eof) return {Outcome::Kind::socket_closed, ms_since(sent_at)};

    for (;;) {
        if (!probe_liveness(host, port)) {
            int64_t latency = ms_since(sent_at);
            return {latency <= timing.exec_timeout_ms ? Outcome::Kind::probe_failed
                                                      : Outcome::Kind::delayed_death,
                    latency};
        }
        if (ms_since(sent_at) >= timing.window_ms) return {Outcome::Kind::ok, 0};
        sleep_ms(timing.probe_interval_ms);
    }
}

std::map<std::string, std::string> CampaignConfig::echo() const {
    return {
        {"host", host},
        {"port", std::to_string(port)},
        {"seeds", seeds_dir},
        {"max_execs", std::to_string(max_execs)},
        {"exec_timeout_ms", std::to_string(timing.exec_timeout_ms)},
        {"window_ms", std::to_string(timing.window_ms)},
        {"probe_interval_ms", std::to_string(timing.probe_interval_ms)},
        {"lanes", std::to_string(lanes)},
        {"steps_per_exec", std::to_string(steps_per_exec)},
        {"parallel", parallel ? "1" : "0"},
        {"structural", structural ? "1" : "0"},
        {"rng_seed", std::to_string(rng_seed)},
        {"exec_delay_ms", std::to_string(exec_delay_ms)},
        {"stop_after_crashes", std::to_string(stop_after_crashes)},
        {"minimize_bytes", minimize_bytes ? "1" : "0"},
    };
}

Result<CampaignConfig, std::string> load_campaign_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) return std::string("cannot open config file: " + file.string());
    CampaignConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            return std::string("line " + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "host") cfg.host = value;
            else if (key == "port") cfg.port = static_cast<uint16_t>(std::stoul(value));
            else if (key == "seeds") cfg.seeds_dir = value;
            else if (key == "max_execs") cfg.max_execs = std::stoull(value);
            else if (key == "exec_timeout_ms") cfg.timing.exec_timeout_ms = std::stoi(value);
            else if (key == "window_ms") cfg.timing.window_ms = std::stoi(value);
            else if (key == "probe_interval_ms") cfg.timing.probe_interval_ms = std::stoi(value);
            else if (key == "lanes") cfg.lanes = std::stoi(value);
            else if (key == "steps_per_exec") cfg.steps_per_exec = std::stoi(value);
            else if (key == "parallel") cfg.parallel = value == "1" || value == "true";
            else if (key == "structural") cfg.structural = value == "1" || value == "true";
            else if (key == "rng_seed") cfg.rng_seed = std::stoull(value);
            else if (key == "exec_delay_ms") cfg.exec_delay_ms = std::stoi(value);
            else if (key == "stop_after_crashes") cfg.stop_after_crashes = std::stoull(value);
            else if (key == "report_dir") cfg.report_dir = value;
            else if (key == "minimize_bytes") cfg.minimize_bytes = value == "1" || value == "true";
            else return std::string("line " + std::to_string(lineno) + ": unknown key " + key);
        } catch (const std::exception&) {
            return std::string("line " + std::to_string(lineno) + ": bad value for " + key);
        }
    }
    if (cfg.timing.window_ms < cfg.timing.exec_timeout_ms)
        return std::string("window_ms must be >= exec_timeout_ms");
    if (cfg.lanes < 1) return std::string("lanes must be >= 1");
    return cfg;
}

std::string bucket(const CrashReport& report) {
    if (!report.bug_id.empty()) return report.bug_id;
    std::ostringstream os;
    os << to_string(report.detection) << "|" << report.sequence.steps.size() << "|"
       << lane_count(report.sequence) << "|" << (report.sequence.parallel ? "p" : "s");
    for (const auto& step : report.sequence.steps)
        os << "|" << frame_fingerprint(step.frame);
    std::string s = os.str();
    std::ostringstream key;
    key << std::hex << fnv1a(ByteView(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
    return key.str();
}

void write_report(const CrashReport& report, const std::filesystem::path& file) {
    std::ofstream out(file);
    out << "ocsc-crash-report v1\n";
    out << "timestamp_ms: " << report.timestamp_ms << "\n";
    out << "detection: " << to_string(report.detection) << "\n";
    out << "latency_ms: " << report.latency_ms << "\n";
    out << "bug_id: " << report.bug_id << "\n";
    out << "bucket: " << report.bucket << "\n";
    out << "parallel: " << (report.sequence.parallel ? 1 : 0) << "\n";
    for (const auto& [k, v] : report.config_echo) out << "config: " << k << "=" << v << "\n";
    for (const auto& step : report.sequence.steps)
        out << "step: lane=" << step.lane << " delay_ms=" << step.pre_delay_ms
            << " frame=" << to_hex(step.frame) << "\n";
}

Result<CrashReport, std::string> read_report(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) return std::string("cannot open report: " + file.string());
    std::string line;
    if (!std::getline(in, line) || line != "ocsc-crash-report v1")
        return std::string("not a crash report: " + file.string());
    CrashReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto colon = line.find(": ");
        if (colon == std::string::npos) return std::string("malformed line: " + line);
        std::string key = line.substr(0, colon);
        std::string value = line.substr(colon + 2);
        if (key == "timestamp_ms") report.timestamp_ms = std::stoll(value);
        else if (key == "detection") {
            auto d = detection_from_string(value);
            if (!d) return std::string("unknown detection class: " + value);
            report.detection = *d;
        } else if (key == "latency_ms") report.latency_ms = std::stoll(value);
        else if (key == "bug_id") report.bug_id = value;
        else if (key == "bucket") report.bucket = value;
        else if (key == "parallel") report.sequence.parallel = value == "1";
        else if (key == "config") {
            auto eq = value.find('=');
            if (eq != std::string::npos)
                report.config_echo[value.substr(0, eq)] = value.substr(eq + 1);
        } else if (key == "step") {
            SequenceStep step;
            std::istringstream ss(value);
            std::string tok;
            while (ss >> tok) {
                if (tok.starts_with("lane=")) step.lane = std::stoi(tok.substr(5));
                else if (tok.starts_with("delay_ms=")) step.pre_delay_ms = std::stoi(tok.substr(9));
                else if (tok.starts_with("frame=")) {
                    auto bytes = from_hex(tok.substr(6));
                    if (!bytes) return std::string("bad frame hex in: " + line);
                    step.frame = std::move(*bytes);
                }
            }
            report.sequence.steps.push_back(std::move(step));
        }
    }
    if (report.sequence.steps.empty()) return std::string("report has no steps");
    return report;
}

ReplayResult replay(const CrashReport& report, Target& target, uint32_t attempts,
                    const ExecTiming& timing) {
    for (uint32_t a = 1; a <= attempts; ++a) {
        if (!target.reset()) return {false, a};
        Outcome out = execute_sequence(report.sequence, target.host(), target.port(), timing);
        bool match = (out.kind == Outcome::Kind::socket_closed &&
                      report.detection == Detection::socket_closed) ||
                     (out.kind == Outcome::Kind::probe_failed &&
                      report.detection == Detection::probe_failed) ||
                     (out.kind == Outcome::Kind::delayed_death &&
                      report.detection == Detection::delayed_death);
        if (match) return {true, a};
    }
    return {false, attempts};
}

Result<FuzzSequence, MinimizeError> minimize(const FuzzSequence& seq, Target& target,
                                             const ExecTiming& timing, bool minimize_bytes) {
    auto crashes = [&](const FuzzSequence& candidate) {
        if (candidate.steps.empty()) return false;
        target.reset();
        return execute_sequence(candidate, target.host(), target.port(), timing).crashed();
    };
    if (!crashes(seq)) return MinimizeError::NotCrashing;

    FuzzSequence current = seq;
    auto subset = [&](const std::vector<size_t>& keep) {
        FuzzSequence s;
        s.parallel = current.parallel;
        for (size_t i : keep) s.steps.push_back(current.steps[i]);
        return normalize_lanes(std::move(s));
    };

    // ddmin over steps.
    size_t granularity = 2;
    while (current.steps.size() >= 2) {
        size_t n = current.steps.size();
        granularity = std::min(granularity, n);
        bool reduced = false;
        for (size_t chunk = 0; chunk < granularity; ++chunk) {
            size_t lo = chunk * n / granularity;
            size_t hi = (chunk + 1) * n / granularity;
            std::vector<size_t> complement;
            for (size_t i = 0; i < n; ++i)
                if (i < lo || i >= hi) complement.push_back(i);
            FuzzSequence cand = subset(complement);
            if (crashes(cand)) {
                current = std::move(cand);
                granularity = std::max<size_t>(2, granularity - 1);
                reduced = true;
                break;
            }
        }
        if (!reduced) {
            if (granularity >= n) break;
            granularity = std::min(n, granularity * 2);
        }
    }

    // Final single-step pass guarantees 1-minimality.
    for (bool changed = true; changed && current.steps.size() >= 2;) {
        changed = false;
        for (size_t i = 0; i < current.steps.size(); ++i) {
            std::vector<size_t> keep;
            for (size_t j = 0; j < current.steps.size(); ++j)
                if (j != i) keep.push_back(j);
            FuzzSequence cand = subset(keep);
            if (crashes(cand)) {
                current = std::move(cand);
                changed = true;
                break;
            }
        }
    }

    if (minimize_bytes) {
        // Tail trim of each surviving frame.
        for (size_t i = 0; i < current.steps.size(); ++i) {
            size_t cut = current.steps[i].frame.size() / 2;
            while (cut >= 1 && current.steps[i].frame.size() > 1) {
                FuzzSequence cand = current;
                cand.steps[i].frame.resize(
                    std::max<size_t>(1, cand.steps[i].frame.size() - cut));
                if (crashes(cand))
                    current = std::move(cand);
                else
                    cut /= 2;
            }
        }
    }

    // Leave the target fresh for whoever runs next.
    target.reset();
    return current;
}

namespace {

// Deterministic execution schedule: seeds and their structural tamperings
// first (singly or as ordered pairs), then seeded havoc forever.
class Scheduler {
public:
    Scheduler(const CampaignConfig& cfg, std::vector<Bytes> pool)
        : cfg_(cfg), pool_(std::move(pool)), rng_(cfg.rng_seed) {
        if (pool_.empty()) pool_.push_back(serialize(build_noop()).value());
    }

    FuzzSequence at(uint64_t index) {
        FuzzSequence seq;
        const uint64_t n = pool_.size();
        const bool pairs = cfg_.steps_per_exec >= 2 || (cfg_.parallel && cfg_.lanes >= 2);
        if (!pairs) {
            seq.steps.push_back({0, index < n ? pool_[index] : havoc_frame(), 0});
            return seq;
        }
        seq.parallel = cfg_.parallel && cfg_.lanes >= 2;
        Bytes a, b;
        if (index < n * n) {
            a = pool_[index / n];
            b = pool_[index % n];
        } else {
            a = havoc_frame();
            b = havoc_frame();
        }
        int lane_b = seq.parallel ? 1 : 0;
        seq.steps.push_back({0, std::move(a), 0});
        seq.steps.push_back({lane_b, std::move(b), 0});
        return seq;
    }

private:
    Bytes havoc_frame() {
        const Bytes& base = pool_[rng_() % pool_.size()];
        return havoc(base, rng_(), 1 + rng_() % 4, /*preserve_magic=*/true);
    }

    const CampaignConfig& cfg_;
    std::vector<Bytes> pool_;
    std::mt19937_64 rng_;
};

}  // namespace

Result<CampaignReport, CampaignError> run_campaign(const CampaignConfig& cfg, Target& target) {
    CampaignReport report;
    if (cfg.max_execs == 0) return report;  // no connections made

    if (!probe_liveness(cfg.host, cfg.port) && !target.reset())
        return CampaignError::TargetUnreachable;

    std::vector<Bytes> pool;
    if (!cfg.seeds_dir.empty()) {
        auto corpus = SeedCorpus::load_dir(cfg.seeds_dir);
        for (const auto& entry : corpus.entries) {
            pool.push_back(entry.frame);
            if (cfg.structural && !entry.raw) {
                auto msg = parse_frame(entry.frame);
                for (auto& cand : structural_candidates(msg.value()))
                    pool.push_back(std::move(cand));
            }
        }
    }
    Scheduler schedule(cfg, std::move(pool));

    if (!cfg.report_dir.empty())
        std::filesystem::create_directories(cfg.report_dir);

    // Write-ahead trigger log: a crash that kills the connection can never
    // lose its own sequence.
    auto pending_path = std::filesystem::path(
        cfg.report_dir.empty() ? "." : cfg.report_dir) / "pending.seq";

    struct RecentExec {
        Clock::time_point at;
        FuzzSequence seq;
    };
    std::deque<RecentExec> recent;

    auto prune_recent = [&] {
        auto cutoff = Clock::now() - std::chrono::milliseconds(cfg.timing.window_ms);
        while (!recent.empty() && recent.front().at < cutoff) recent.pop_front();
    };

    // Finds the shortest crashing prefix of a composite step list, then
    // hands it to ddmin. Covers both same-execution crashes and delayed
    // deaths attributed across executions.
    auto attribute = [&](std::vector<SequenceStep> steps) -> std::optional<FuzzSequence> {
        FuzzSequence composite;
        composite.steps = std::move(steps);
        composite = normalize_lanes(std::move(composite));
        auto crashes = [&](const FuzzSequence& c) {
            if (c.steps.empty()) return false;
            target.reset();
            return execute_sequence(c, cfg.host, cfg.port, cfg.timing).crashed();
        };
        if (!crashes(composite)) return std::nullopt;
        size_t lo = 1, hi = composite.steps.size();
        while (lo < hi) {
            size_t mid = lo + (hi - lo) / 2;
            FuzzSequence prefix;
            prefix.steps.assign(composite.steps.begin(), composite.steps.begin() + mid);
            if (crashes(normalize_lanes(prefix)))
                hi = mid;
            else
                lo = mid + 1;
        }
        FuzzSequence prefix;
        prefix.steps.assign(composite.steps.begin(), composite.steps.begin() + lo);
        prefix = normalize_lanes(std::move(prefix));
        auto minimized = minimize(prefix, target, cfg.timing, cfg.minimize_bytes);
        if (!minimized) return std::nullopt;
        return std::move(minimized).value();
    };

    auto canary = TcpConn::connect(cfg.host, cfg.port, std::chrono::milliseconds(500));
    const auto t0 = Clock::now();
    const auto echo = cfg.echo();
    uint64_t crash_files = 0;

    for (uint64_t i = 0; i < cfg.max_execs; ++i) {
        FuzzSequence seq = schedule.at(i);
        {
            std::ofstream pending(pending_path, std::ios::trunc);
            pending << "parallel: " << (seq.parallel ? 1 : 0) << "\n";
            for (const auto& step : seq.steps)
                pending << "step: lane=" << step.lane << " delay_ms=" << step.pre_delay_ms
                        << " frame=" << to_hex(step.frame) << "\n";
        }

        bool eof = false;
        bool sent = send_steps(seq, cfg.host, cfg.port, std::chrono::milliseconds(2), eof);
        ++report.executions;
        if (canary && canary->peer_closed(std::chrono::milliseconds(0))) eof = true;
        if (sent && !eof) {
            prune_recent();
            recent.push_back({Clock::now(), seq});
            sleep_ms(cfg.exec_delay_ms);
            continue;
        }

        // Death observed: attribute it to a minimal sequence.
        std::vector<SequenceStep> suspects;
        prune_recent();
        for (const auto& r : recent)
            for (const auto& s : r.seq.steps) suspects.push_back(s);
        std::optional<FuzzSequence> culprit;
        // Try the current sequence in isolation first; it is the usual case.
        {
            target.reset();
            if (execute_sequence(seq, cfg.host, cfg.port, cfg.timing).crashed()) {
                auto minimized = minimize(seq, target, cfg.timing, cfg.minimize_bytes);
                if (minimized) culprit = std::move(minimized).value();
            }
        }
        if (!culprit && !suspects.empty()) {
            for (const auto& s : seq.steps) suspects.push_back(s);
            culprit = attribute(std::move(suspects));
        }
        recent.clear();

        if (culprit) {
            target.reset();
            Outcome out = execute_sequence(*culprit, cfg.host, cfg.port, cfg.timing);
            std::string bug_id = target.take_bug_id();
            if (out.crashed()) {
                CrashReport crash;
                crash.sequence = *culprit;
                crash.detection = out.kind == Outcome::Kind::socket_closed
                                      ? Detection::socket_closed
                                  : out.kind == Outcome::Kind::probe_failed
                                      ? Detection::probe_failed
                                      : Detection::delayed_death;
                crash.latency_ms = out.latency_ms;
                crash.bug_id = bug_id;
                crash.timestamp_ms = wall_ms();
                crash.config_echo = echo;
                crash.bucket = bucket(crash);
                report.buckets.insert(crash.bucket);
                if (!cfg.report_dir.empty()) {
                    std::ostringstream name;
                    name << "crash-" << std::setw(4) << std::setfill('0') << crash_files++
                         << "-" << crash.bucket << ".txt";
                    write_report(crash, std::filesystem::path(cfg.report_dir) / name.str());
                }
                report.crashes.push_back(std::move(crash));
            }
        }

        target.reset();
        canary = TcpConn::connect(cfg.host, cfg.port, std::chrono::milliseconds(500));
        if (cfg.stop_after_crashes && report.crashes.size() >= cfg.stop_after_crashes) break;
    }

    double secs = std::max<int64_t>(1, ms_since(t0)) / 1000.0;
    report.execs_per_sec = static_cast<double>(report.executions) / secs;
    std::error_code ec;
    std::filesystem::remove(pending_path, ec);
    return report;
}

}  // namespace ocsc
