#pragma once

#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "taskmill/errors.hpp"
#include "taskmill/util.hpp"

namespace taskmill {

enum class JobState : int {
    INIT,
    SUBMITTED,
    QUEUED,
    RUNNING,
    DONE,
    SUCCESS,
    FAILED,
    CANCELLED,
    DISABLED,
};

inline const char* job_state_name(JobState s) {
    switch (s) {
    case JobState::INIT: return "INIT";
    case JobState::SUBMITTED: return "SUBMITTED";
    case JobState::QUEUED: return "QUEUED";
    case JobState::RUNNING: return "RUNNING";
    case JobState::DONE: return "DONE";
    case JobState::SUCCESS: return "SUCCESS";
    case JobState::FAILED: return "FAILED";
    case JobState::CANCELLED: return "CANCELLED";
    case JobState::DISABLED: return "DISABLED";
    }
    return "?";
}

inline std::optional<JobState> job_state_from_name(std::string_view name) {
    for (int i = 0; i <= static_cast<int>(JobState::DISABLED); ++i) {
        auto s = static_cast<JobState>(i);
        if (name == job_state_name(s)) return s;
    }
    return std::nullopt;
}

// SUCCESS and DISABLED never transition again; CANCELLED only via the
// space diff (handled as non-terminal for DISABLED below).
inline bool job_state_terminal(JobState s) {
    return s == JobState::SUCCESS || s == JobState::DISABLED;
}

struct JobRecord {
    std::int64_t job_id = 0;
    JobState state = JobState::INIT;
    int attempt = 0;
    std::optional<std::string> backend_handle;
    std::optional<int> exit_code;
    std::vector<std::pair<std::int64_t, JobState>> history; // (timestamp, state)

    bool in_flight() const {
        return state == JobState::SUBMITTED || state == JobState::QUEUED ||
               state == JobState::RUNNING;
    }

    bool operator==(const JobRecord&) const = default;
};

// Allowed lifecycle edges. Cancellation is reachable from every
// non-terminal state (user-triggered), disabling likewise (space diff).
inline bool legal_transition(JobState from, JobState to) {
    if (job_state_terminal(from)) return false;
    if (to == JobState::DISABLED) return true;
    if (to == JobState::CANCELLED) return from != JobState::CANCELLED;
    switch (from) {
    case JobState::INIT: return to == JobState::SUBMITTED;
    case JobState::SUBMITTED:
        return to == JobState::QUEUED || to == JobState::RUNNING || to == JobState::FAILED;
    case JobState::QUEUED: return to == JobState::RUNNING || to == JobState::FAILED;
    case JobState::RUNNING: return to == JobState::DONE || to == JobState::FAILED;
    case JobState::DONE: return to == JobState::SUCCESS || to == JobState::FAILED;
    case JobState::FAILED: return to == JobState::SUBMITTED;
    default: return false;
    }
}

// A FAILED job may be resubmitted while execution attempts remain; failures
// without an exit code were backend faults and do not consume retries.
inline bool can_resubmit(const JobRecord& r, int max_retries) {
    if (r.state != JobState::FAILED) return false;
    if (!r.exit_code) return true;
    return r.attempt < max_retries;
}

// Settled jobs take part in no further activity.
inline bool job_settled(const JobRecord& r, int max_retries) {
    switch (r.state) {
    case JobState::SUCCESS:
    case JobState::DISABLED:
    case JobState::CANCELLED: return true;
    case JobState::FAILED: return !can_resubmit(r, max_retries);
    default: return false;
    }
}

// Applies one state change, appending to the history with a monotone
// timestamp. FAILED -> SUBMITTED increments the attempt counter when the
// failure was an execution failure, and always clears handle and exit code.
inline void apply_transition(JobRecord& r, JobState to, int max_retries,
                             std::int64_t now = std::time(nullptr)) {
    if (!legal_transition(r.state, to))
        throw IllegalTransition(job_state_name(r.state), job_state_name(to));
    if (r.state == JobState::FAILED && to == JobState::SUBMITTED) {
        if (!can_resubmit(r, max_retries))
            throw IllegalTransition("FAILED (retries exhausted)", "SUBMITTED");
        if (r.exit_code) ++r.attempt;
        r.exit_code.reset();
        r.backend_handle.reset();
    }
    if (!r.history.empty()) now = std::max(now, r.history.back().first);
    r.state = to;
    r.history.emplace_back(now, to);
}

enum class Activity { submit, check, retrieve };

inline const char* activity_name(Activity a) {
    switch (a) {
    case Activity::submit: return "submit";
    case Activity::check: return "check";
    case Activity::retrieve: return "retrieve";
    }
    return "?";
}

struct ActivityConfig {
    std::int64_t chunk_size = 100;     // M: jobs handled per pass
    int max_retries = 3;
    std::int64_t in_flight_limit = -1; // -1 = unlimited
};

// In-memory job database, flushed per cycle: a single jobs.db file plus an
// append-only history sidecar.
class JobDb {
public:
    JobRecord& create(std::int64_t job_id, std::int64_t now = std::time(nullptr)) {
        auto& r = records_[job_id];
        r.job_id = job_id;
        r.state = JobState::INIT;
        r.history.emplace_back(now, JobState::INIT);
        pending_history_.emplace_back(job_id, now, JobState::INIT);
        return r;
    }

    JobRecord* find(std::int64_t job_id) {
        auto it = records_.find(job_id);
        return it == records_.end() ? nullptr : &it->second;
    }

    const std::map<std::int64_t, JobRecord>& records() const { return records_; }
    std::map<std::int64_t, JobRecord>& records() { return records_; }

    void apply(JobRecord& r, JobState to, int max_retries,
               std::int64_t now = std::time(nullptr)) {
        apply_transition(r, to, max_retries, now);
        pending_history_.emplace_back(r.job_id, r.history.back().first, to);
    }

    // Sort-then-chunk job selection: the full eligible list is sorted by id
    // and the first min(M, N) returned. Each non-empty selection counts one
    // sort pass for its activity.
    std::vector<std::int64_t> select_chunk(Activity activity, const ActivityConfig& cfg) {
        std::vector<std::int64_t> eligible;
        std::int64_t in_flight = 0;
        for (const auto& [id, r] : records_) {
            if (r.in_flight()) ++in_flight;
            bool pick = false;
            switch (activity) {
            case Activity::submit:
                pick = r.state == JobState::INIT || can_resubmit(r, cfg.max_retries);
                break;
            case Activity::check: pick = r.in_flight(); break;
            case Activity::retrieve: pick = r.state == JobState::DONE; break;
            }
            if (pick) eligible.push_back(id);
        }
        if (eligible.empty()) return eligible;
        ++sort_passes_[static_cast<int>(activity)];
        std::sort(eligible.begin(), eligible.end());
        std::size_t take = std::min<std::size_t>(eligible.size(),
                                                 static_cast<std::size_t>(cfg.chunk_size));
        if (activity == Activity::submit && cfg.in_flight_limit >= 0) {
            std::int64_t budget = std::max<std::int64_t>(0, cfg.in_flight_limit - in_flight);
            take = std::min<std::size_t>(take, static_cast<std::size_t>(budget));
        }
        eligible.resize(take);
        return eligible;
    }

    std::int64_t sort_passes(Activity activity) const {
        return sort_passes_[static_cast<int>(activity)];
    }
    std::int64_t total_sort_passes() const {
        return sort_passes_[0] + sort_passes_[1] + sort_passes_[2];
    }

    std::map<JobState, std::int64_t> state_counts() const {
        std::map<JobState, std::int64_t> counts;
        for (const auto& [id, r] : records_) ++counts[r.state];
        return counts;
    }

    // Flush: history lines are appended first, then the record file is
    // replaced atomically, so a crash never shows a state the sidecar does
    // not know about.
    void persist(const std::filesystem::path& workdir) {
        if (!pending_history_.empty()) {
            std::ofstream hist(workdir / "jobs.history", std::ios::app);
            for (const auto& [id, ts, state] : pending_history_)
                hist << id << ' ' << ts << ' ' << job_state_name(state) << '\n';
            hist.flush();
            if (!hist) throw Error("cannot append job history in " + workdir.string());
            pending_history_.clear();
        }
        fault::crash_point();

        std::ostringstream out;
        out << "version 1\n";
        for (const auto& [id, r] : records_) {
            out << id << ' ' << job_state_name(r.state) << ' ' << r.attempt << ' ';
            if (r.exit_code) out << *r.exit_code;
            else out << '-';
            out << ' ';
            if (r.backend_handle) out << url_encode(*r.backend_handle);
            else out << '-';
            out << '\n';
        }
        atomic_write_file(workdir / "jobs.db", out.str());
    }

    static JobDb load(const std::filesystem::path& workdir) {
        JobDb db;
        auto path = workdir / "jobs.db";
        if (!std::filesystem::exists(path)) return db;
        std::istringstream in(read_file(path));
        std::string line;
        if (!std::getline(in, line) || trim(line) != "version 1")
            throw CorruptJobFile("bad or missing version header in " + path.string());
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto fields = split_ws(line);
            if (fields.size() != 5)
                throw CorruptJobFile("malformed record: '" + line + "'");
            JobRecord r;
            try {
                r.job_id = parse_i64(fields[0], "job id");
                r.attempt = static_cast<int>(parse_i64(fields[2], "attempt"));
                if (fields[3] != "-")
                    r.exit_code = static_cast<int>(parse_i64(fields[3], "exit code"));
            } catch (const ConfigError& e) {
                throw CorruptJobFile(e.what());
            }
            auto state = job_state_from_name(fields[1]);
            if (!state) throw CorruptJobFile("unknown state '" + fields[1] + "'");
            r.state = *state;
            if (fields[4] != "-") r.backend_handle = url_decode(fields[4]);
            if (db.records_.count(r.job_id))
                throw CorruptJobFile("duplicate job id " + fields[0]);
            db.records_[r.job_id] = std::move(r);
        }
        db.attach_history(workdir / "jobs.history");
        return db;
    }

private:
    void attach_history(const std::filesystem::path& path) {
        if (!std::filesystem::exists(path)) return;
        std::istringstream in(read_file(path));
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto fields = split_ws(line);
            if (fields.size() != 3) throw CorruptJobFile("malformed history line: '" + line + "'");
            try {
                auto it = records_.find(parse_i64(fields[0], "history job id"));
                if (it == records_.end()) continue; // line newer than this db generation
                auto state = job_state_from_name(fields[2]);
                if (!state) throw CorruptJobFile("unknown history state '" + fields[2] + "'");
                it->second.history.emplace_back(parse_i64(fields[1], "history timestamp"),
                                                *state);
            } catch (const ConfigError& e) {
                throw CorruptJobFile(e.what());
            }
        }
    }

    std::map<std::int64_t, JobRecord> records_;
    std::vector<std::tuple<std::int64_t, std::int64_t, JobState>> pending_history_;
    std::int64_t sort_passes_[3] = {0, 0, 0};
};

} // namespace taskmill
