#include "ocsc/agent.hpp"

#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ocsc {

namespace fs = std::filesystem;

namespace {

constexpr size_t kConnBufferCap = 1 << 20;
constexpr auto kRaceWindow = std::chrono::milliseconds(50);

bool path_under(const fs::path& p, const fs::path& root) {
    auto cp = fs::weakly_canonical(p);
    auto cr = fs::weakly_canonical(root);
    auto it = std::mismatch(cr.begin(), cr.end(), cp.begin(), cp.end());
    return it.first == cr.end();
}

// True when the pending bytes cannot be the start of another frame, i.e. a
// declared length was shrunk below the payload actually sent.
bool garbage_prefix(ByteView rest) {
    if (rest.empty()) return false;
    static const uint8_t magic[4] = {'O', 'C', 'S', 'C'};
    size_t n = std::min<size_t>(rest.size(), 4);
    return std::memcmp(rest.data(), magic, n) != 0;
}

}  // namespace

std::string MockAgent::sign_package(const std::string& digest_hex) {
    const std::string keyed = "ocsc-test-vendor-key:" + digest_hex;
    return compute_digest(to_bytes(keyed), "sha1").value();
}

MockAgent::MockAgent(Options opts) : opts_(std::move(opts)) {}

Result<std::unique_ptr<MockAgent>, ServeError> MockAgent::serve(Options opts) {
    auto& policy = opts.policy;
    if (policy.sandbox_root.empty()) return ServeError::BadSandbox;
    std::error_code ec;
    if (!fs::is_directory(policy.sandbox_root, ec)) return ServeError::BadSandbox;
    if (policy.script_dir.empty()) policy.script_dir = policy.sandbox_root / "script";
    if (policy.profile_dir.empty()) policy.profile_dir = policy.sandbox_root / "profile";
    if (policy.allowed_temp_prefix.empty())
        policy.allowed_temp_prefix = policy.sandbox_root / "tmp";
    for (const auto* dir : {&policy.script_dir, &policy.profile_dir, &policy.allowed_temp_prefix}) {
        if (!path_under(*dir, policy.sandbox_root)) return ServeError::BadSandbox;
        fs::create_directories(*dir, ec);
        if (ec) return ServeError::BadSandbox;
    }

    auto agent = std::unique_ptr<MockAgent>(new MockAgent(std::move(opts)));
    ServeError err = ServeError::PortInUse;
    if (!agent->bind_listener(err)) return err;
    agent->load_profile();
    agent->log_event("event=serve port=" + std::to_string(agent->actual_port_));
    agent->main_thread_ = std::thread([a = agent.get()] { a->main_loop(); });
    return agent;
}

bool MockAgent::bind_listener(ServeError& err) {
    int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) {
        err = ServeError::PortInUse;
        return false;
    }
    int one = 1;
    setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);  // loopback only
    addr.sin_port = htons(actual_port_ ? actual_port_ : opts_.policy.listen_port);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(fd, 64) != 0) {
        ::close(fd);
        err = ServeError::PortInUse;
        return false;
    }
    socklen_t len = sizeof(addr);
    getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    actual_port_ = ntohs(addr.sin_port);
    listen_fd_ = fd;
    listening_ = true;
    return true;
}

MockAgent::~MockAgent() {
    stop();
}

void MockAgent::stop() {
    stop_requested_ = true;
    crash("");
    if (main_thread_.joinable()) main_thread_.join();
}

bool MockAgent::alive() const {
    return listening_ && !crashed_;
}

void MockAgent::main_loop() {
    for (;;) {
        run_instance();
        listening_ = false;
        {
            std::lock_guard lk(conn_mu_);
            for (auto& [id, fd] : conn_fds_)
                if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
        }
        for (auto& t : conn_threads_) t.join();
        conn_threads_.clear();
        conn_fds_.clear();
        if (listen_fd_ >= 0) {
            ::close(listen_fd_);
            listen_fd_ = -1;
        }
        if (stop_requested_ || !opts_.supervisor) break;

        // Supervised restart, standing in for the init system relaunching
        // the service after a crash.
        auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::milliseconds(opts_.restart_delay_ms);
        while (!stop_requested_ && std::chrono::steady_clock::now() < deadline)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        if (stop_requested_) break;
        reset_state();
        ServeError err;
        if (!bind_listener(err)) break;
        log_event("event=restart port=" + std::to_string(actual_port_));
    }
}

void MockAgent::reset_state() {
    {
        std::lock_guard lk(mu_);
        corrupt_heap_ = false;
        corrupt_deadline_armed_ = false;
        deployed_.clear();
        dispatch_ledger_.clear();
    }
    crashed_ = false;
    load_profile();  // a fresh process re-reads the profile
}

void MockAgent::run_instance() {
    while (!stop_requested_ && !crashed_) {
        pollfd pfd{listen_fd_, POLLIN, 0};
        int rc = ::poll(&pfd, 1, 20);
        {
            std::unique_lock lk(mu_);
            if (corrupt_deadline_armed_ &&
                std::chrono::steady_clock::now() >= corrupt_deadline_) {
                corrupt_deadline_armed_ = false;
                lk.unlock();
                crash("B3");
                return;
            }
        }
        if (rc <= 0) continue;
        int cfd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (cfd < 0) continue;
        int one = 1;
        setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        uint64_t id;
        {
            std::lock_guard lk(conn_mu_);
            id = next_conn_id_++;
            conn_fds_[id] = cfd;
            conn_threads_.emplace_back([this, id, cfd] { handle_connection(id, cfd); });
        }
    }
}

void MockAgent::handle_connection(uint64_t conn_id, int fd) {
    Bytes buffer;
    uint8_t chunk[4096];
    while (!crashed_ && !stop_requested_) {
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) break;
        buffer.insert(buffer.end(), chunk, chunk + n);
        if (buffer.size() > kConnBufferCap)
            buffer.erase(buffer.begin(), buffer.end() - IpcHeader::kHeaderSize);
        process_buffer(conn_id, fd, buffer);
    }
    ::close(fd);
    std::lock_guard lk(conn_mu_);
    conn_fds_[conn_id] = -1;
}

void MockAgent::process_buffer(uint64_t conn_id, int fd, Bytes& buffer) {
    static const uint8_t magic[4] = {'O', 'C', 'S', 'C'};
    for (;;) {
        // Resync to the next magic; tolerate arbitrary garbage in between.
        auto it = std::search(buffer.begin(), buffer.end(), magic, magic + 4);
        size_t skip = static_cast<size_t>(it - buffer.begin());
        if (it == buffer.end()) {
            size_t keep = std::min<size_t>(buffer.size(), 3);
            buffer.erase(buffer.begin(), buffer.end() - keep);
            return;
        }
        buffer.erase(buffer.begin(), it);
        if (buffer.size() < IpcHeader::kHeaderSize) return;

        auto header = parse_header(ByteView(buffer.data(), IpcHeader::kHeaderSize));
        if (!header) {
            buffer.erase(buffer.begin(), buffer.begin() + 4);  // skip magic, rescan
            continue;
        }
        size_t total = IpcHeader::kHeaderSize + header.value().body_len;
        if (buffer.size() < total) return;  // wait for the rest

        bool garbage = garbage_prefix(ByteView(buffer.data() + total, buffer.size() - total));
        dispatch(conn_id, fd, header.value(),
                 ByteView(buffer.data() + IpcHeader::kHeaderSize, header.value().body_len),
                 garbage);
        if (crashed_) return;
        buffer.erase(buffer.begin(), buffer.begin() + total);
        (void)skip;
    }
}

void MockAgent::dispatch(uint64_t conn_id, int fd, const IpcHeader& header, ByteView body,
                         bool garbage_follows) {
    const auto& bugs = opts_.bugs;

    // (1) zero-length header on a frame that actually carried body bytes:
    // rejection path frees the message twice.
    if (bugs.b2_double_free && header.body_len == 0 && garbage_follows) {
        crash("B2");
        return;
    }

    // (2) length shrunk to 0x0006: the short TLV copy corrupts the heap but
    // processing finishes normally. With the timed variant enabled, death
    // follows once the timer expires.
    if ((bugs.b3_timed_heap || bugs.b4_alloc_after_corrupt) && header.body_len == 0x0006 &&
        garbage_follows) {
        {
            std::lock_guard lk(mu_);
            corrupt_heap_ = true;
            if (bugs.b3_timed_heap) {
                corrupt_deadline_ =
                    std::chrono::steady_clock::now() +
                    std::chrono::milliseconds(bugs.b3_timer_ms);
                corrupt_deadline_armed_ = true;
            }
        }
        log_event("event=heap_corrupt");
        send_ack(fd, header.msg_id, "OK");
        return;
    }

    // (3) building the response stub allocates; with the heap already
    // corrupted that dies immediately.
    if (bugs.b4_alloc_after_corrupt) {
        bool fire = false;
        {
            std::lock_guard lk(mu_);
            fire = corrupt_heap_;
        }
        if (fire) {
            crash("B4");
            return;
        }
    }

    // (4) dispatchable frames from two connections inside the race window.
    if (header.msg_type > 0 && header.msg_id != 0x00 && header.msg_id != 0x0d) {
        bool fire = false;
        {
            std::lock_guard lk(mu_);
            auto now = std::chrono::steady_clock::now();
            std::erase_if(dispatch_ledger_, [&](const DispatchEntry& e) {
                return now - e.at > std::chrono::seconds(1);
            });
            if (bugs.b1_race)
                for (const auto& e : dispatch_ledger_)
                    if (e.conn_id != conn_id && now - e.at <= kRaceWindow) fire = true;
            dispatch_ledger_.push_back({conn_id, now});
        }
        if (fire) {
            crash("B1");
            return;
        }
    }

    // (5) CAC-move deployment command.
    auto [tlvs, trailer] = parse_tlvs(body, opts_.profile);
    for (const auto& tlv : tlvs) {
        auto cmd = parse_deploy_command(
            std::string_view(reinterpret_cast<const char*>(tlv.value.data()), tlv.value.size()));
        if (cmd && cmd->command == "CAC-move") {
            MoveResult res = apply_cac_move(*cmd);
            send_ack(fd, header.msg_id, res.moved ? "OK" : "ERR");
            return;
        }
    }

    // (6) disconnect trigger.
    if (header.msg_type == opts_.profile.disconnect_msg_type &&
        header.msg_id == opts_.profile.disconnect_msg_id) {
        trigger_disconnect();
        send_ack(fd, header.msg_id, "OK");
        return;
    }

    // (7) anything else is tolerated silently.
}

void MockAgent::crash(const std::string& bug_id) {
    bool expected = false;
    if (!crashed_.compare_exchange_strong(expected, true)) return;
    if (!bug_id.empty()) {
        {
            std::lock_guard lk(mu_);
            last_bug_ = bug_id;
        }
        if (opts_.log_bug_ids) log_event("event=crash bug=" + bug_id);
    }
    listening_ = false;
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    std::lock_guard lk(conn_mu_);
    for (auto& [id, fd] : conn_fds_)
        if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
}

void MockAgent::send_ack(int fd, uint8_t request_msg_id, const std::string& status) {
    // Ack frame shape is synthetic: no capture of the real reply exists.
    IpcMessage ack;
    ack.header.msg_type = 0x02;
    ack.header.msg_id = request_msg_id;
    TlvField f;
    f.type_code = 0x0001;
    f.value = to_bytes(status);
    f.value.push_back('\0');
    ack.tlvs = {std::move(f)};
    auto raw = serialize(ack, opts_.profile);
    if (raw) (void)!::send(fd, raw.value().data(), raw.value().size(), MSG_NOSIGNAL);
}

MoveResult MockAgent::apply_cac_move(const DeployCommand& cmd) {
    const auto& policy = opts_.policy;
    fs::path src = cmd.src_path;
    fs::path dst = cmd.dst_path;

    // Containment: nothing outside the sandbox is ever touched.
    if (!path_under(dst, policy.sandbox_root) || !path_under(src, policy.sandbox_root)) {
        log_event("event=rejected reason=dst_outside_sandbox dst=" + dst.string());
        return {false, 0, MoveReject::dst_outside_sandbox};
    }
    if (!path_under(src, policy.allowed_temp_prefix)) {
        log_event("event=rejected reason=src_outside_temp src=" + src.string());
        return {false, 0, MoveReject::src_outside_temp};
    }

    std::ifstream in(src, std::ios::binary);
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto digest = compute_digest(data, cmd.digest_algo);
    if (!in || !digest || digest.value() != cmd.digest_hex) {
        log_event("event=rejected reason=bad_digest src=" + src.string());
        return {false, 0, MoveReject::bad_digest};
    }

    if (policy.restrict_script_web_deploy && path_under(dst, policy.script_dir)) {
        log_event("event=rejected reason=policy dst=" + dst.string());
        return {false, 0, MoveReject::policy};
    }

    // Deliberately absent: sender authentication, overwrite protection.
    std::error_code ec;
    fs::create_directories(dst.parent_path(), ec);
    fs::rename(src, dst, ec);
    if (ec) {
        fs::copy_file(src, dst, fs::copy_options::overwrite_existing, ec);
        fs::remove(src, ec);
    }
    const int mode = (cmd.mode_flag == '1') ? 0755 : 0644;
    fs::permissions(dst, static_cast<fs::perms>(mode), ec);

    char mode_str[8];
    std::snprintf(mode_str, sizeof(mode_str), "%04o", mode);
    {
        std::lock_guard lk(mu_);
        deployed_.push_back({dst.string(), mode, cmd.digest_hex});
    }
    log_event("event=moved dst=" + dst.string() + " mode=" + mode_str + " flag=" +
              cmd.mode_flag);
    return {true, mode, MoveReject::bad_digest};
}

InstallResult MockAgent::check_installer(const InstallerPackage& pkg) const {
    auto digest = compute_digest(pkg.payload, "sha1");
    if (!digest || digest.value() != pkg.digest_hex) return {false, InstallReject::bad_digest};
    if (pkg.signature != sign_package(pkg.digest_hex))
        return {false, InstallReject::bad_signature};
    if (opts_.policy.require_version_upgrade) {
        // Dotted-numeric compare; reject anything not strictly newer.
        auto parse = [](const std::string& v) {
            std::vector<int> parts;
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, '.')) parts.push_back(std::atoi(item.c_str()));
            return parts;
        };
        if (parse(pkg.version) <= parse(opts_.installed_version))
            return {false, InstallReject::downgrade};
    }
    // Version ordering is otherwise ignored: downgrades install cleanly.
    return {true, InstallReject::bad_digest};
}

void MockAgent::trigger_disconnect() {
    fs::path script = opts_.policy.script_dir / "OnDisconnect";
    std::error_code ec;
    bool scripting;
    {
        std::lock_guard lk(mu_);
        scripting = scripting_enabled_;
    }
    if (fs::is_regular_file(script, ec) && scripting) {
        auto perms = fs::status(script, ec).permissions();
        if ((perms & fs::perms::owner_exec) != fs::perms::none) {
            int mode = static_cast<int>(perms) & 0777;
            char mode_str[8];
            std::snprintf(mode_str, sizeof(mode_str), "%04o", mode);
            log_event("event=would_execute path=" + script.string() + " mode=" + mode_str);
            return;
        }
    }
    log_event("event=disconnect");
}

bool MockAgent::load_profile() {
    fs::path profile;
    std::error_code ec;
    std::vector<fs::path> files;
    if (fs::is_directory(opts_.policy.profile_dir, ec))
        for (const auto& e : fs::directory_iterator(opts_.policy.profile_dir, ec))
            if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());

    bool enabled = false;  // safe default when no profile exists
    if (!files.empty()) {
        std::ifstream in(files.front());
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        auto pos = content.find("<EnableScripting>");
        if (pos != std::string::npos) {
            auto rest = content.substr(pos + 17);
            auto first = rest.find_first_not_of(" \t\r\n");
            enabled = first != std::string::npos && rest.compare(first, 4, "true") == 0;
        }
    }
    std::lock_guard lk(mu_);
    scripting_enabled_ = enabled;
    return enabled;
}

bool MockAgent::reload_profile_on_reconnect() {
    bool enabled = load_profile();
    log_event(std::string("event=profile_reload scripting=") + (enabled ? "true" : "false"));
    return enabled;
}

bool MockAgent::scripting_enabled() const {
    std::lock_guard lk(mu_);
    return scripting_enabled_;
}

std::vector<DeployedFile> MockAgent::deployed_files() const {
    std::lock_guard lk(mu_);
    return deployed_;
}

std::vector<std::string> MockAgent::event_log() const {
    std::lock_guard lk(mu_);
    return events_;
}

std::string MockAgent::last_bug_id() const {
    std::lock_guard lk(mu_);
    return last_bug_;
}

std::filesystem::path MockAgent::event_log_path() const {
    return opts_.policy.sandbox_root / "events.log";
}

void MockAgent::log_event(const std::string& line) {
    std::lock_guard lk(mu_);
    events_.push_back(line);
    std::ofstream out(event_log_path(), std::ios::app);
    out << line << '\n';
}

}  // namespace ocsc
