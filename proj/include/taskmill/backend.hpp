#pragma once

#include <cctype>
#include <csignal>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <spawn.h>
#include <sstream>
#include <string>
#include <string_view>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>
#include <vector>

#include "taskmill/errors.hpp"
#include "taskmill/paramspace.hpp"
#include "taskmill/util.hpp"

extern char** environ;

namespace taskmill {

struct SubmitRequest {
    std::int64_t job_id = 0;
    int attempt = 0;
    ParameterPoint point;
    std::filesystem::path executable;
    std::vector<std::filesystem::path> input_files;
    std::filesystem::path sandbox_dir; // unique per (job_id, attempt)
};

enum class EventKind { queued, running, done, failed, cancelled };

inline const char* event_kind_name(EventKind k) {
    switch (k) {
    case EventKind::queued: return "queued";
    case EventKind::running: return "running";
    case EventKind::done: return "done";
    case EventKind::failed: return "failed";
    case EventKind::cancelled: return "cancelled";
    }
    return "?";
}

// exit_code present iff kind is done or failed
struct BackendEvent {
    std::string backend_handle;
    EventKind kind;
    std::optional<int> exit_code;
};

struct CancelOutcome {
    std::string handle;
    bool ok = true;
    std::string message;
};

// Uniform submission interface: opaque handles, polled status, idempotent
// cancellation. All calls come from the single engine loop.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string submit(const SubmitRequest& request) = 0;
    virtual std::vector<BackendEvent> poll(std::span<const std::string> handles) = 0;
    virtual std::vector<CancelOutcome> cancel(std::span<const std::string> handles) = 0;
    virtual std::string name() const = 0;
};

namespace detail {

inline bool valid_env_name(std::string_view name) {
    if (name.empty()) return false;
    if (!std::isalpha(static_cast<unsigned char>(name[0])) && name[0] != '_') return false;
    for (char c : name)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

inline std::string shell_quote(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\"'\"'";
        else out.push_back(c);
    }
    out += "'";
    return out;
}

// The generated wrapper needs only a basic POSIX shell: it exports the job
// environment, runs the payload with captured streams, forwards TERM, and
// always leaves an EXITCODE line in job.info.
inline std::string render_wrapper(const SubmitRequest& req) {
    std::ostringstream sh;
    sh << "#!/bin/sh\n";
    sh << "cd " << shell_quote(req.sandbox_dir.string()) << " || exit 99\n";
    sh << "export GC_JOB_ID=" << shell_quote(std::to_string(req.job_id)) << "\n";
    sh << "export GC_ATTEMPT=" << shell_quote(std::to_string(req.attempt)) << "\n";
    for (const auto& [var, value] : req.point.values) {
        if (!valid_env_name(var)) continue;
        sh << "export " << var << "=" << shell_quote(value) << "\n";
    }
    sh << shell_quote(req.executable.string()) << " > job.stdout 2> job.stderr &\n";
    sh << "child=$!\n";
    sh << "trap 'kill -TERM \"$child\" 2>/dev/null' TERM INT HUP\n";
    sh << "wait \"$child\"\n";
    sh << "rc=$?\n";
    sh << "while kill -0 \"$child\" 2>/dev/null; do\n";
    sh << "  wait \"$child\"\n";
    sh << "  rc=$?\n";
    sh << "done\n";
    sh << "echo \"EXITCODE=$rc\" > job.info\n";
    return sh.str();
}

inline std::optional<int> read_exit_code(const std::filesystem::path& sandbox) {
    auto info = sandbox / "job.info";
    if (!std::filesystem::exists(info)) return std::nullopt;
    std::istringstream in(read_file(info));
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("EXITCODE=", 0) == 0) {
            try {
                return static_cast<int>(parse_i64(line.substr(9), "exit code"));
            } catch (const ConfigError&) {
                return std::nullopt;
            }
        }
    }
    return std::nullopt;
}

} // namespace detail

// Runs jobs as local processes, at most `slots` concurrently; excess
// submissions queue inside the backend and report QUEUED until a slot
// frees. Handles survive engine restarts: liveness is recovered from the
// sandbox's job.pid / job.info files, and a job that never started is
// adopted back into the queue.
class LocalBackend : public Backend {
public:
    explicit LocalBackend(int slots = 0)
        : slots_(slots > 0 ? slots
                           : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))) {}

    std::string name() const override { return "local"; }

    std::string submit(const SubmitRequest& request) override {
        namespace fs = std::filesystem;
        std::error_code ec;
        fs::create_directories(request.sandbox_dir, ec);
        if (ec) throw SubmitFailed("cannot create sandbox " + request.sandbox_dir.string());
        if (::access(request.executable.c_str(), X_OK) != 0)
            throw SubmitFailed("executable not runnable: " + request.executable.string());
        for (const auto& input : request.input_files) {
            fs::copy_file(input, request.sandbox_dir / input.filename(),
                          fs::copy_options::overwrite_existing, ec);
            if (ec) throw SubmitFailed("cannot stage input file " + input.string());
        }
        auto script = request.sandbox_dir / "job.sh";
        atomic_write_file(script, detail::render_wrapper(request));
        fs::permissions(script, fs::perms::owner_all, fs::perm_options::add, ec);

        std::string handle = "local:" + request.sandbox_dir.string();
        std::erase(pending_, handle); // resubmission into the same sandbox
        jobs_[handle] = JobSlot{.queued = true};
        pending_.push_back(handle);
        fill_slots();
        return handle;
    }

    std::vector<BackendEvent> poll(std::span<const std::string> handles) override {
        fill_slots();
        std::vector<BackendEvent> events;
        for (const auto& handle : handles) {
            auto sandbox = sandbox_of(handle);
            if (!jobs_.count(handle)) adopt(handle, sandbox);
            auto& job = jobs_.at(handle);
            if (job.terminal_sent) continue;

            if (job.spawn_failed) {
                job.terminal_sent = true;
                events.push_back({handle, EventKind::failed, -1});
                continue;
            }
            if (job.queued) {
                if (job.cancel_requested) {
                    job.terminal_sent = true;
                    events.push_back({handle, EventKind::cancelled, std::nullopt});
                } else {
                    events.push_back({handle, EventKind::queued, std::nullopt});
                }
                continue;
            }
            if (job.pid && job.owned) { // our child: reap it
                int status = 0;
                pid_t r = ::waitpid(*job.pid, &status, WNOHANG);
                if (r == 0) {
                    events.push_back({handle, EventKind::running, std::nullopt});
                    continue;
                }
                --running_;
                fill_slots();
                std::optional<int> status_code;
                if (r > 0 && WIFEXITED(status)) status_code = WEXITSTATUS(status);
                else if (r > 0 && WIFSIGNALED(status)) status_code = 128 + WTERMSIG(status);
                events.push_back(finish(handle, job, sandbox, status_code));
                continue;
            }
            // external process from a previous incarnation
            if (job.pid && ::kill(*job.pid, 0) == 0) {
                events.push_back({handle, EventKind::running, std::nullopt});
                continue;
            }
            events.push_back(finish(handle, job, sandbox, std::nullopt));
        }
        return events;
    }

    std::vector<CancelOutcome> cancel(std::span<const std::string> handles) override {
        std::vector<CancelOutcome> outcomes;
        for (const auto& handle : handles) {
            if (handle.rfind("local:", 0) != 0) {
                outcomes.push_back({handle, false, "not a local handle"});
                continue;
            }
            auto sandbox = sandbox_of(handle);
            if (!jobs_.count(handle)) {
                if (!std::filesystem::exists(sandbox)) {
                    outcomes.push_back({handle, false, "unknown sandbox"});
                    continue;
                }
                adopt(handle, sandbox);
            }
            auto& job = jobs_.at(handle);
            if (job.terminal_sent) {
                outcomes.push_back({handle, true, "already finished"});
                continue;
            }
            job.cancel_requested = true;
            if (job.queued) std::erase(pending_, handle);
            else if (job.pid) ::kill(*job.pid, SIGTERM);
            outcomes.push_back({handle, true, {}});
        }
        return outcomes;
    }

    int slots() const { return slots_; }

private:
    struct JobSlot {
        std::optional<pid_t> pid;
        bool queued = false;  // waiting for a slot (listed in pending_)
        bool owned = false;   // pid is our child and must be reaped
        bool spawn_failed = false;
        bool cancel_requested = false;
        bool terminal_sent = false;
    };

    std::filesystem::path sandbox_of(const std::string& handle) const {
        if (handle.rfind("local:", 0) != 0) throw UnknownHandle(handle);
        return handle.substr(6);
    }

    static std::optional<pid_t> read_pid(const std::filesystem::path& sandbox) {
        auto path = sandbox / "job.pid";
        if (!std::filesystem::exists(path)) return std::nullopt;
        try {
            return static_cast<pid_t>(parse_i64(trim(read_file(path)), "pid"));
        } catch (const ConfigError&) {
            return std::nullopt;
        }
    }

    // Registers a handle from a previous engine incarnation. A sandbox with
    // no pid file holds a job that never started: re-enqueue it.
    void adopt(const std::string& handle, const std::filesystem::path& sandbox) {
        if (!std::filesystem::exists(sandbox)) throw UnknownHandle(handle);
        JobSlot job;
        if (auto pid = read_pid(sandbox)) {
            job.pid = pid; // external: judged by liveness + job.info
        } else {
            job.queued = true;
            pending_.push_back(handle);
        }
        jobs_[handle] = job;
        fill_slots();
    }

    BackendEvent finish(const std::string& handle, JobSlot& job,
                        const std::filesystem::path& sandbox, std::optional<int> status_code) {
        job.terminal_sent = true;
        if (job.cancel_requested) return {handle, EventKind::cancelled, std::nullopt};
        auto exit_code = detail::read_exit_code(sandbox);
        if (!exit_code) exit_code = status_code;
        int code = exit_code.value_or(-1);
        return {handle, code == 0 ? EventKind::done : EventKind::failed, code};
    }

    void fill_slots() {
        while (running_ < slots_ && !pending_.empty()) {
            auto handle = pending_.front();
            pending_.pop_front();
            auto& job = jobs_.at(handle);
            if (job.cancel_requested || job.terminal_sent) continue;
            auto sandbox = sandbox_of(handle);
            auto script = (sandbox / "job.sh").string();
            const char* argv[] = {"sh", script.c_str(), nullptr};
            pid_t pid = 0;
            int rc = ::posix_spawn(&pid, "/bin/sh", nullptr, nullptr,
                                   const_cast<char* const*>(argv), environ);
            job.queued = false;
            if (rc != 0) {
                job.spawn_failed = true;
                continue;
            }
            job.pid = pid;
            job.owned = true;
            atomic_write_file(sandbox / "job.pid", std::to_string(pid) + "\n");
            ++running_;
        }
    }

    int slots_;
    int running_ = 0;
    std::deque<std::string> pending_;
    std::map<std::string, JobSlot> jobs_;
};

// Deterministic batch-system stand-in. Every handle walks
// queued -> running -> terminal, reaching the terminal state on poll number
// latency_polls + 1. The terminal kind is a pure function of
// (seed, job_id, attempt) plus forced overrides, so runs replay bit-equal.
struct MockScript {
    std::uint64_t seed = 0;
    int latency_polls = 2;
    double failure_rate = 0.0;
    std::map<std::int64_t, EventKind> forced_outcomes;
};

class MockBackend : public Backend {
public:
    explicit MockBackend(MockScript script = {}) : script_(std::move(script)) {}

    std::string name() const override { return "mock"; }

    std::string submit(const SubmitRequest& request) override {
        ++submit_calls_[request.job_id];
        return "mock:" + std::to_string(request.job_id) + ":" + std::to_string(request.attempt);
    }

    std::vector<BackendEvent> poll(std::span<const std::string> handles) override {
        std::vector<BackendEvent> events;
        for (const auto& handle : handles) {
            auto [job_id, attempt] = parse_handle(handle);
            auto& st = states_[handle];
            if (st.terminal_sent) continue;
            ++st.polls;
            int terminal_at = std::max(1, script_.latency_polls + 1);
            if (st.cancel_requested) {
                st.terminal_sent = true;
                events.push_back({handle, EventKind::cancelled, std::nullopt});
                continue;
            }
            if (st.polls < terminal_at) {
                events.push_back({handle,
                                  st.polls == 1 ? EventKind::queued : EventKind::running,
                                  std::nullopt});
                continue;
            }
            st.terminal_sent = true;
            auto kind = outcome(job_id, attempt);
            std::optional<int> exit_code;
            if (kind == EventKind::done) exit_code = 0;
            if (kind == EventKind::failed) exit_code = 1;
            events.push_back({handle, kind, exit_code});
        }
        return events;
    }

    std::vector<CancelOutcome> cancel(std::span<const std::string> handles) override {
        std::vector<CancelOutcome> outcomes;
        for (const auto& handle : handles) {
            parse_handle(handle);
            auto& st = states_[handle];
            if (!st.terminal_sent) st.cancel_requested = true;
            outcomes.push_back({handle, true, st.terminal_sent ? "already finished" : ""});
        }
        return outcomes;
    }

    EventKind outcome(std::int64_t job_id, int attempt) const {
        auto it = script_.forced_outcomes.find(job_id);
        if (it != script_.forced_outcomes.end()) return it->second;
        // splitmix64 over (seed, job_id, attempt)
        std::uint64_t x = script_.seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(job_id) + 1) +
                          0xBF58476D1CE4E5B9ull * (static_cast<std::uint64_t>(attempt) + 1);
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ull;
        x ^= x >> 27;
        x *= 0x94D049BB133111EBull;
        x ^= x >> 31;
        double u = static_cast<double>(x >> 11) * 0x1.0p-53;
        return u < script_.failure_rate ? EventKind::failed : EventKind::done;
    }

    std::int64_t submit_calls(std::int64_t job_id) const {
        auto it = submit_calls_.find(job_id);
        return it == submit_calls_.end() ? 0 : it->second;
    }

private:
    static std::pair<std::int64_t, int> parse_handle(const std::string& handle) {
        if (handle.rfind("mock:", 0) != 0) throw UnknownHandle(handle);
        auto rest = handle.substr(5);
        auto sep = rest.find(':');
        if (sep == std::string::npos) throw UnknownHandle(handle);
        try {
            return {parse_i64(rest.substr(0, sep), "job id"),
                    static_cast<int>(parse_i64(rest.substr(sep + 1), "attempt"))};
        } catch (const ConfigError&) {
            throw UnknownHandle(handle);
        }
    }

    struct HandleState {
        int polls = 0;
        bool cancel_requested = false;
        bool terminal_sent = false;
    };

    MockScript script_;
    std::map<std::string, HandleState> states_;
    std::map<std::int64_t, std::int64_t> submit_calls_;
};

// Spreads submissions round-robin over several backends; handles are tagged
// with the owning backend and poll/cancel route by tag.
class MultiplexBackend : public Backend {
public:
    explicit MultiplexBackend(std::vector<std::shared_ptr<Backend>> backends)
        : backends_(std::move(backends)) {
        if (backends_.empty()) throw ConfigError("multiplex needs at least one backend");
    }

    std::string name() const override { return "multiplex"; }

    std::string submit(const SubmitRequest& request) override {
        auto idx = next_++ % backends_.size();
        return tag(idx, backends_[idx]->submit(request));
    }

    std::vector<BackendEvent> poll(std::span<const std::string> handles) override {
        std::map<std::size_t, std::vector<std::string>> by_backend;
        for (const auto& handle : handles) {
            auto [idx, inner] = untag(handle);
            by_backend[idx].push_back(inner);
        }
        std::vector<BackendEvent> events;
        for (auto& [idx, inner] : by_backend) {
            for (auto ev : backends_[idx]->poll(inner)) {
                ev.backend_handle = tag(idx, ev.backend_handle);
                events.push_back(std::move(ev));
            }
        }
        return events;
    }

    std::vector<CancelOutcome> cancel(std::span<const std::string> handles) override {
        std::map<std::size_t, std::vector<std::string>> by_backend;
        for (const auto& handle : handles) {
            auto [idx, inner] = untag(handle);
            by_backend[idx].push_back(inner);
        }
        std::vector<CancelOutcome> outcomes;
        for (auto& [idx, inner] : by_backend) {
            for (auto oc : backends_[idx]->cancel(inner)) {
                oc.handle = tag(idx, oc.handle);
                outcomes.push_back(std::move(oc));
            }
        }
        return outcomes;
    }

    Backend& backend(std::size_t idx) { return *backends_.at(idx); }

private:
    static std::string tag(std::size_t idx, const std::string& inner) {
        return "b" + std::to_string(idx) + "|" + inner;
    }

    std::pair<std::size_t, std::string> untag(const std::string& handle) const {
        auto bar = handle.find('|');
        if (handle.size() < 3 || handle[0] != 'b' || bar == std::string::npos)
            throw UnknownHandle(handle);
        std::size_t idx = 0;
        try {
            idx = static_cast<std::size_t>(parse_i64(handle.substr(1, bar - 1), "backend tag"));
        } catch (const ConfigError&) {
            throw UnknownHandle(handle);
        }
        if (idx >= backends_.size()) throw UnknownHandle(handle);
        return {idx, handle.substr(bar + 1)};
    }

    std::vector<std::shared_ptr<Backend>> backends_;
    std::size_t next_ = 0;
};

} // namespace taskmill
