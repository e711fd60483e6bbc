#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "taskmill/config.hpp"
#include "taskmill/errors.hpp"
#include "taskmill/util.hpp"

namespace taskmill {

// Per-point scheduling requirements. Reserved variable names (WALLTIME,
// MEMORY, CPUS, LOCATION) are pulled out of the value map when a space is
// enumerated; they never take part in point hashing, so editing them does
// not invalidate finished jobs.
struct Requirements {
    std::optional<std::int64_t> walltime_s;
    std::optional<std::int64_t> memory_mb;
    std::optional<std::int64_t> cpus;
    std::optional<std::vector<std::string>> locations;

    bool operator==(const Requirements&) const = default;

    void merge_from(const Requirements& other) {
        if (other.walltime_s) walltime_s = other.walltime_s;
        if (other.memory_mb) memory_mb = other.memory_mb;
        if (other.cpus) cpus = other.cpus;
        if (other.locations) locations = other.locations;
    }
};

// One fully resolved variable assignment; maps 1:1 to a job. A variable
// missing from the map is equivalent to an empty string.
struct ParameterPoint {
    std::map<std::string, std::string> values;
    Requirements requirements;
    std::optional<std::int64_t> partition_id; // set for dataset-derived points
    std::string hash;
    bool active = true;

    bool operator==(const ParameterPoint&) const = default;
};

// Digest of the sorted non-empty (var, value) pairs plus the partition
// identity when present. Empty values hash like absent variables.
inline std::string point_hash(const ParameterPoint& p) {
    std::string material;
    for (const auto& [var, value] : p.values) {
        if (value.empty()) continue;
        material += url_encode(var);
        material += '=';
        material += url_encode(value);
        material += '&';
    }
    if (p.partition_id) material += "#partition=" + std::to_string(*p.partition_id);
    return hex64(fnv1a64(material));
}

// --- parameter sources ------------------------------------------------------

class ParameterSource;
using SourcePtr = std::shared_ptr<const ParameterSource>;

class ParameterSource {
public:
    virtual ~ParameterSource() = default;

    // Expands one partially assigned point into zero or more refined points.
    virtual std::vector<ParameterPoint> expand(const ParameterPoint& base) const = 0;

    // Variables this source can assign.
    virtual void collect_vars(std::set<std::string>& out) const = 0;
};

class ValueListSource final : public ParameterSource {
public:
    ValueListSource(std::string var, std::vector<std::string> values)
        : var_(std::move(var)), values_(std::move(values)) {}

    std::vector<ParameterPoint> expand(const ParameterPoint& base) const override {
        std::vector<ParameterPoint> out;
        out.reserve(values_.size());
        for (const auto& v : values_) {
            out.push_back(base);
            out.back().values[var_] = v;
        }
        return out;
    }

    void collect_vars(std::set<std::string>& out) const override { out.insert(var_); }

    const std::string& var() const { return var_; }
    const std::vector<std::string>& values() const { return values_; }

private:
    std::string var_;
    std::vector<std::string> values_;
};

class TupleListSource final : public ParameterSource {
public:
    TupleListSource(std::vector<std::string> vars, std::vector<std::vector<std::string>> tuples)
        : vars_(std::move(vars)), tuples_(std::move(tuples)) {
        for (const auto& t : tuples_)
            if (t.size() != vars_.size())
                throw MalformedTuple("tuple arity " + std::to_string(t.size()) +
                                     " does not match " + std::to_string(vars_.size()) +
                                     " variables");
    }

    std::vector<ParameterPoint> expand(const ParameterPoint& base) const override {
        std::vector<ParameterPoint> out;
        out.reserve(tuples_.size());
        for (const auto& t : tuples_) {
            out.push_back(base);
            for (std::size_t i = 0; i < vars_.size(); ++i) out.back().values[vars_[i]] = t[i];
        }
        return out;
    }

    void collect_vars(std::set<std::string>& out) const override {
        out.insert(vars_.begin(), vars_.end());
    }

    const std::vector<std::string>& vars() const { return vars_; }
    const std::vector<std::vector<std::string>>& tuples() const { return tuples_; }

private:
    std::vector<std::string> vars_;
    std::vector<std::vector<std::string>> tuples_;
};

// Values depend on another variable: rules are checked in order against the
// key variable's current value (exact string match); no rule matches means
// the defaults apply.
class LookupSource final : public ParameterSource {
public:
    using Rule = std::pair<std::string, std::vector<std::string>>;

    LookupSource(std::string var, std::string key_var, std::vector<std::string> default_values,
                 std::vector<Rule> rules)
        : var_(std::move(var)), key_var_(std::move(key_var)),
          default_values_(std::move(default_values)), rules_(std::move(rules)) {}

    std::vector<ParameterPoint> expand(const ParameterPoint& base) const override {
        auto it = base.values.find(key_var_);
        const std::string key = it == base.values.end() ? std::string() : it->second;
        const std::vector<std::string>* matched = &default_values_;
        for (const auto& [match, values] : rules_) {
            if (match == key) {
                matched = &values;
                break;
            }
        }
        std::vector<ParameterPoint> out;
        out.reserve(matched->size());
        for (const auto& v : *matched) {
            out.push_back(base);
            out.back().values[var_] = v;
        }
        return out;
    }

    void collect_vars(std::set<std::string>& out) const override { out.insert(var_); }

    const std::string& var() const { return var_; }
    const std::string& key_var() const { return key_var_; }
    void set_key_var(std::string k) { key_var_ = std::move(k); }
    const std::vector<std::string>& default_values() const { return default_values_; }
    const std::vector<Rule>& rules() const { return rules_; }

private:
    std::string var_;
    std::string key_var_;
    std::vector<std::string> default_values_;
    std::vector<Rule> rules_;
};

// Cartesian combination; the rightmost factor varies fastest. A later
// factor overrides earlier assignments of the same variable.
class CrossSource final : public ParameterSource {
public:
    explicit CrossSource(std::vector<SourcePtr> factors) : factors_(std::move(factors)) {}

    std::vector<ParameterPoint> expand(const ParameterPoint& base) const override {
        std::vector<ParameterPoint> acc{base};
        for (const auto& factor : factors_) {
            std::vector<ParameterPoint> next;
            for (const auto& partial : acc) {
                auto ext = factor->expand(partial);
                next.insert(next.end(), std::make_move_iterator(ext.begin()),
                            std::make_move_iterator(ext.end()));
            }
            acc = std::move(next);
        }
        return acc;
    }

    void collect_vars(std::set<std::string>& out) const override {
        for (const auto& f : factors_) f->collect_vars(out);
    }

    const std::vector<SourcePtr>& factors() const { return factors_; }

private:
    std::vector<SourcePtr> factors_;
};

// Concatenation of subspaces; terms may define different variable sets, a
// variable absent in one term reads as the empty string there.
class ChainSource final : public ParameterSource {
public:
    explicit ChainSource(std::vector<SourcePtr> terms) : terms_(std::move(terms)) {}

    std::vector<ParameterPoint> expand(const ParameterPoint& base) const override {
        std::vector<ParameterPoint> out;
        for (const auto& term : terms_) {
            auto part = term->expand(base);
            out.insert(out.end(), std::make_move_iterator(part.begin()),
                       std::make_move_iterator(part.end()));
        }
        return out;
    }

    void collect_vars(std::set<std::string>& out) const override {
        for (const auto& t : terms_) t->collect_vars(out);
    }

    const std::vector<SourcePtr>& terms() const { return terms_; }

private:
    std::vector<SourcePtr> terms_;
};

// Materialized stream of dataset partition fragments, injected by the
// engine when a dataset is configured.
class DataSource final : public ParameterSource {
public:
    explicit DataSource(std::vector<ParameterPoint> fragments)
        : fragments_(std::move(fragments)) {}

    std::vector<ParameterPoint> expand(const ParameterPoint& base) const override {
        std::vector<ParameterPoint> out;
        out.reserve(fragments_.size());
        for (const auto& frag : fragments_) {
            out.push_back(base);
            auto& p = out.back();
            for (const auto& [k, v] : frag.values) p.values[k] = v;
            p.requirements.merge_from(frag.requirements);
            p.partition_id = frag.partition_id;
        }
        return out;
    }

    void collect_vars(std::set<std::string>& out) const override {
        for (const auto& frag : fragments_)
            for (const auto& [k, v] : frag.values) out.insert(k);
    }

private:
    std::vector<ParameterPoint> fragments_;
};

// --- value parsing ----------------------------------------------------------

namespace detail {

inline std::vector<std::vector<std::string>> parse_tuples(std::string_view raw,
                                                          std::size_t arity) {
    std::vector<std::vector<std::string>> tuples;
    std::size_t i = 0;
    while (i < raw.size()) {
        if (std::isspace(static_cast<unsigned char>(raw[i]))) {
            ++i;
            continue;
        }
        if (raw[i] != '(')
            throw MalformedTuple("expected '(' in tuple list: '" + std::string(raw) + "'");
        auto close = raw.find(')', i);
        if (close == std::string_view::npos)
            throw MalformedTuple("unterminated tuple in '" + std::string(raw) + "'");
        auto inner = raw.substr(i + 1, close - i - 1);
        std::vector<std::string> tuple;
        for (const auto& part : split(inner, ',')) tuple.push_back(trim(part));
        if (tuple.size() != arity)
            throw MalformedTuple("tuple (" + std::string(inner) + ") has arity " +
                                 std::to_string(tuple.size()) + ", expected " +
                                 std::to_string(arity));
        tuples.push_back(std::move(tuple));
        i = close + 1;
    }
    return tuples;
}

} // namespace detail

// Parses the option text of one variable (possibly multi-line).
//  - plain whitespace-separated tokens        -> ValueListSource
//  - "(a, b)" tokens under a tuple-typed key  -> TupleListSource
//  - continuation lines containing "=>"       -> LookupSource (key bound later)
inline std::shared_ptr<ParameterSource> parse_values(std::string_view raw,
                                                     const std::vector<std::string>& vars) {
    auto lines = split(raw, '\n');
    bool lookup_shaped = false;
    for (std::size_t i = 1; i < lines.size(); ++i)
        if (lines[i].find("=>") != std::string::npos) lookup_shaped = true;

    if (lookup_shaped) {
        if (vars.size() != 1)
            throw MalformedLookupRule("lookup rules are only valid for a single variable");
        std::vector<std::string> defaults = split_ws(lines[0]);
        std::vector<LookupSource::Rule> rules;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            auto arrow = lines[i].find("=>");
            if (arrow == std::string::npos)
                throw MalformedLookupRule("expected 'match => values', got '" + lines[i] + "'");
            rules.emplace_back(trim(lines[i].substr(0, arrow)),
                               split_ws(lines[i].substr(arrow + 2)));
        }
        return std::make_shared<LookupSource>(vars[0], "", std::move(defaults),
                                              std::move(rules));
    }

    if (vars.size() > 1)
        return std::make_shared<TupleListSource>(vars, detail::parse_tuples(raw, vars.size()));

    std::vector<std::string> values;
    for (const auto& line : lines)
        for (auto& tok : split_ws(line)) values.push_back(std::move(tok));
    return std::make_shared<ValueListSource>(vars[0], std::move(values));
}

// --- DSL parsing ------------------------------------------------------------

// Supplies variable definitions and nested section spaces to the DSL parser.
class SourceResolver {
public:
    virtual ~SourceResolver() = default;
    virtual std::optional<std::string> variable_text(const std::string& name) = 0;
    virtual SourcePtr section_space(const std::string& section) = 0;
};

namespace detail {

class DslParser {
public:
    DslParser(std::string_view expr, SourceResolver& resolver)
        : expr_(expr), resolver_(resolver) {}

    SourcePtr parse() {
        auto src = parse_expr();
        skip_ws();
        if (pos_ != expr_.size())
            throw DslSyntaxError(pos_, "unexpected '" + std::string(1, expr_[pos_]) + "'");
        return src;
    }

private:
    SourcePtr parse_expr() {
        std::vector<SourcePtr> terms{parse_term()};
        skip_ws();
        while (pos_ < expr_.size() && expr_[pos_] == '+') {
            ++pos_;
            terms.push_back(parse_term());
            skip_ws();
        }
        if (terms.size() == 1) return terms[0];
        return std::make_shared<ChainSource>(std::move(terms));
    }

    SourcePtr parse_term() {
        std::vector<SourcePtr> factors;
        std::set<std::string> left_vars;
        for (;;) {
            skip_ws();
            if (pos_ >= expr_.size() || expr_[pos_] == '+' || expr_[pos_] == ')') break;
            auto factor = parse_factor();
            if (auto* lookup = dynamic_cast<const LookupSource*>(factor.get())) {
                if (!left_vars.count(lookup->key_var()))
                    throw LookupWithoutKey("lookup " + lookup->var() + "[" +
                                           lookup->key_var() +
                                           "]: key variable is not defined by a preceding "
                                           "factor in the same term");
            }
            factor->collect_vars(left_vars);
            factors.push_back(std::move(factor));
        }
        if (factors.empty()) throw DslSyntaxError(pos_, "expected a parameter factor");
        if (factors.size() == 1) return factors[0];
        return std::make_shared<CrossSource>(std::move(factors));
    }

    SourcePtr parse_factor() {
        skip_ws();
        if (pos_ >= expr_.size()) throw DslSyntaxError(pos_, "unexpected end of expression");
        char c = expr_[pos_];
        if (c == '(') return parse_tuple_factor();
        if (c == '{') return parse_section_factor();
        auto name = parse_name();
        skip_ws();
        if (pos_ < expr_.size() && expr_[pos_] == '[') {
            ++pos_;
            skip_ws();
            auto key = parse_name();
            skip_ws();
            expect(']');
            return make_lookup(name, key);
        }
        return make_plain(name);
    }

    SourcePtr parse_tuple_factor() {
        expect('(');
        std::vector<std::string> names;
        for (;;) {
            skip_ws();
            names.push_back(parse_name());
            skip_ws();
            if (pos_ < expr_.size() && expr_[pos_] == ',') {
                ++pos_;
                continue;
            }
            expect(')');
            break;
        }
        // The option key is the canonical "(a, b)" form.
        std::string key = "(" + join(names, ", ") + ")";
        auto text = resolver_.variable_text(key);
        if (!text) throw MissingOption(key, "parameter sections");
        auto src = parse_values(*text, names);
        if (!dynamic_cast<const TupleListSource*>(src.get()))
            throw MalformedTuple("option '" + key + "' does not hold tuples");
        return src;
    }

    SourcePtr parse_section_factor() {
        expect('{');
        skip_ws();
        auto name = parse_name();
        skip_ws();
        expect('}');
        return resolver_.section_space(name);
    }

    SourcePtr make_lookup(const std::string& name, const std::string& key) {
        auto text = resolver_.variable_text(name);
        if (!text) throw MissingOption(name, "parameter sections");
        auto src = parse_values(*text, {name});
        if (auto* lookup = dynamic_cast<LookupSource*>(src.get())) {
            lookup->set_key_var(key);
            return src;
        }
        // A plain value list used as NAME[KEY] is a lookup with defaults only.
        auto* list = dynamic_cast<const ValueListSource*>(src.get());
        return std::make_shared<LookupSource>(name, key, list->values(),
                                              std::vector<LookupSource::Rule>{});
    }

    SourcePtr make_plain(const std::string& name) {
        auto text = resolver_.variable_text(name);
        if (!text) throw MissingOption(name, "parameter sections");
        auto src = parse_values(*text, {name});
        if (dynamic_cast<const LookupSource*>(src.get()))
            throw LookupWithoutKey("variable " + name +
                                   " has lookup rules but no [KEY] was given");
        return src;
    }

    std::string parse_name() {
        auto is_name_char = [](char c) {
            return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' ||
                   c == '-';
        };
        std::size_t start = pos_;
        while (pos_ < expr_.size() && is_name_char(expr_[pos_])) ++pos_;
        if (pos_ == start) throw DslSyntaxError(pos_, "expected a name");
        return std::string(expr_.substr(start, pos_ - start));
    }

    void expect(char c) {
        if (pos_ >= expr_.size() || expr_[pos_] != c)
            throw DslSyntaxError(pos_, std::string("expected '") + c + "'");
        ++pos_;
    }

    void skip_ws() {
        while (pos_ < expr_.size() && std::isspace(static_cast<unsigned char>(expr_[pos_])))
            ++pos_;
    }

    std::string_view expr_;
    SourceResolver& resolver_;
    std::size_t pos_ = 0;
};

} // namespace detail

// Grammar:  expr := term ('+' term)*
//           term := factor (WS factor)*
//           factor := NAME | '(' NAME (',' NAME)* ')' | NAME '[' NAME ']' | '{' SECTION '}'
// Juxtaposition builds a cross product, '+' chains subspaces.
inline SourcePtr parse_dsl(std::string_view expr, SourceResolver& resolver) {
    if (trim(expr).empty()) throw DslSyntaxError(0, "empty parameter expression");
    return detail::DslParser(expr, resolver).parse();
}

// Resolver backed by a ConfigView: variables come from the current section
// (falling back to [parameters]), '{s}' recurses into section s.
class ConfigSourceResolver : public SourceResolver {
public:
    ConfigSourceResolver(const ConfigView& view, std::string section,
                         std::vector<std::string> ancestors = {})
        : view_(view), section_(std::move(section)), ancestors_(std::move(ancestors)) {
        scopes_.push_back(section_);
        if (ConfigView::canon(section_) != "parameters") scopes_.push_back("parameters");
    }

    std::optional<std::string> variable_text(const std::string& name) override {
        return view_.find_scoped(scopes_, name);
    }

    SourcePtr section_space(const std::string& name) override {
        auto canon = ConfigView::canon(name);
        for (const auto& a : ancestors_)
            if (a == canon)
                throw ConfigError("recursive parameter section '" + name + "'");
        if (ConfigView::canon(section_) == canon)
            throw ConfigError("recursive parameter section '" + name + "'");
        auto expr = view_.find(name, "parameters");
        if (!expr) throw UnknownSection(name);
        auto ancestors = ancestors_;
        ancestors.push_back(ConfigView::canon(section_));
        ConfigSourceResolver sub(view_, canon, std::move(ancestors));
        return parse_dsl(*expr, sub);
    }

private:
    const ConfigView& view_;
    std::string section_;
    std::vector<std::string> ancestors_;
    std::vector<std::string> scopes_;
};

// Builds the user-defined parameter source from [<section>] parameters, or
// returns nullptr when the config defines none.
inline SourcePtr build_space_source(const ConfigView& view,
                                    const std::string& section = "parameters") {
    auto expr = view.find(section, "parameters");
    if (!expr) return nullptr;
    ConfigSourceResolver resolver(view, section);
    return parse_dsl(*expr, resolver);
}

// --- enumeration ------------------------------------------------------------

namespace detail {

inline bool reserved_requirement_var(std::string_view var, std::string& canon_out) {
    std::string u;
    u.reserve(var.size());
    for (char c : var) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (u == "WALLTIME" || u == "MEMORY" || u == "CPUS" || u == "LOCATION") {
        canon_out = u;
        return true;
    }
    return false;
}

inline void extract_requirements(ParameterPoint& p) {
    for (auto it = p.values.begin(); it != p.values.end();) {
        std::string canon;
        if (!reserved_requirement_var(it->first, canon)) {
            ++it;
            continue;
        }
        const std::string& v = it->second;
        if (canon == "WALLTIME") p.requirements.walltime_s = parse_walltime(v);
        else if (canon == "MEMORY") p.requirements.memory_mb = parse_i64(v, "MEMORY");
        else if (canon == "CPUS") p.requirements.cpus = parse_i64(v, "CPUS");
        else p.requirements.locations = split_ws(v);
        it = p.values.erase(it);
    }
}

} // namespace detail

// Enumerates the full ordered point list: value lists in listed order, cross
// products with the rightmost factor varying fastest, chains concatenated.
// Reserved requirement variables are moved into Requirements and every point
// receives its content hash.
inline std::vector<ParameterPoint> enumerate(const ParameterSource& source) {
    auto points = source.expand(ParameterPoint{});
    for (auto& p : points) {
        detail::extract_requirements(p);
        p.hash = point_hash(p);
    }
    return points;
}

// --- snapshots and diffing --------------------------------------------------

struct SnapshotEntry {
    std::int64_t job_id = 0;
    std::string hash;
    std::map<std::string, std::string> values;

    bool operator==(const SnapshotEntry&) const = default;
};

// Hash sentinel for entries whose job has been disabled. Retired entries
// keep their id and values (for reports) but never match a new point, so a
// re-appearing point is appended under a fresh id instead of resurrecting
// the disabled job.
inline constexpr std::string_view kRetiredHash = "0000000000000000";

inline bool snapshot_entry_retired(const SnapshotEntry& e) { return e.hash == kRetiredHash; }

// Persistent record of every job id ever assigned. Ids are strictly
// increasing and never reused, even for disabled jobs.
struct SpaceSnapshot {
    std::vector<SnapshotEntry> entries;
    std::int64_t max_job_id = -1;

    bool operator==(const SpaceSnapshot&) const = default;
};

struct SpaceDiff {
    std::map<std::int64_t, std::size_t> assignments;            // job_id -> new point index
    std::vector<std::int64_t> disabled;                         // old jobs with no new point
    std::vector<std::pair<std::int64_t, std::size_t>> appended; // fresh job_id -> point index
};

// Multiset match by hash: old jobs are scanned in id order and bound to the
// earliest unbound new point with an equal hash. Unmatched old jobs are
// disabled; unmatched new points get fresh ids after max_job_id.
inline SpaceDiff diff_spaces(const SpaceSnapshot& old,
                             const std::vector<ParameterPoint>& new_points) {
    SpaceDiff diff;
    std::map<std::string, std::vector<std::size_t>> unbound; // hash -> point indices (ordered)
    for (std::size_t i = 0; i < new_points.size(); ++i)
        unbound[new_points[i].hash].push_back(i);
    std::map<std::string, std::size_t> cursor;
    std::set<std::size_t> bound;

    for (const auto& entry : old.entries) {
        if (snapshot_entry_retired(entry)) continue;
        auto it = unbound.find(entry.hash);
        bool matched = false;
        if (it != unbound.end()) {
            auto& pos = cursor[entry.hash];
            if (pos < it->second.size()) {
                auto idx = it->second[pos++];
                diff.assignments[entry.job_id] = idx;
                bound.insert(idx);
                matched = true;
            }
        }
        if (!matched) diff.disabled.push_back(entry.job_id);
    }

    std::int64_t next_id = old.max_job_id + 1;
    for (std::size_t i = 0; i < new_points.size(); ++i)
        if (!bound.count(i)) diff.appended.emplace_back(next_id++, i);
    return diff;
}

// Snapshot after a diff: retained entries keep their ids (values refreshed
// from the matched point), disabled entries are retired in place, appended
// points are added.
inline SpaceSnapshot apply_diff(const SpaceSnapshot& old,
                                const std::vector<ParameterPoint>& points,
                                const SpaceDiff& diff) {
    SpaceSnapshot out;
    for (const auto& entry : old.entries) {
        auto it = diff.assignments.find(entry.job_id);
        if (it != diff.assignments.end()) {
            out.entries.push_back({entry.job_id, points[it->second].hash,
                                   points[it->second].values});
        } else {
            out.entries.push_back({entry.job_id, std::string(kRetiredHash), entry.values});
        }
    }
    for (const auto& [job_id, idx] : diff.appended)
        out.entries.push_back({job_id, points[idx].hash, points[idx].values});
    out.max_job_id = old.max_job_id;
    for (const auto& e : out.entries) out.max_job_id = std::max(out.max_job_id, e.job_id);
    return out;
}

// Snapshot file: "version 1" header, then one line per job:
//   <job_id> <hash> <url-encoded var=value pairs joined by '&'>
inline void persist_snapshot(const SpaceSnapshot& snapshot, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "version 1\n";
    for (const auto& e : snapshot.entries) {
        out << e.job_id << ' ' << e.hash;
        bool first = true;
        for (const auto& [k, v] : e.values) {
            out << (first ? ' ' : '&') << url_encode(k) << '=' << url_encode(v);
            first = false;
        }
        out << '\n';
    }
    atomic_write_file(path, out.str());
}

inline SpaceSnapshot load_snapshot(const std::filesystem::path& path) {
    auto text = read_file(path);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || trim(line) != "version 1")
        throw CorruptSnapshot(1, "bad or missing version header");
    SpaceSnapshot snap;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto sp1 = line.find(' ');
        if (sp1 == std::string::npos) throw CorruptSnapshot(lineno, "missing hash field");
        auto sp2 = line.find(' ', sp1 + 1);
        SnapshotEntry entry;
        try {
            entry.job_id = parse_i64(line.substr(0, sp1), "job id");
        } catch (const ConfigError& e) {
            throw CorruptSnapshot(lineno, e.what());
        }
        entry.hash = line.substr(sp1 + 1, sp2 == std::string::npos ? std::string::npos
                                                                   : sp2 - sp1 - 1);
        if (entry.hash.size() != 16)
            throw CorruptSnapshot(lineno, "malformed hash '" + entry.hash + "'");
        if (sp2 != std::string::npos) {
            auto pairs = line.substr(sp2 + 1);
            if (!pairs.empty()) {
                for (const auto& pair : split(pairs, '&')) {
                    auto eq = pair.find('=');
                    if (eq == std::string::npos)
                        throw CorruptSnapshot(lineno, "malformed pair '" + pair + "'");
                    entry.values[url_decode(pair.substr(0, eq))] =
                        url_decode(pair.substr(eq + 1));
                }
            }
        }
        if (!snap.entries.empty() && entry.job_id <= snap.entries.back().job_id)
            throw CorruptSnapshot(lineno, "job ids not strictly increasing");
        snap.max_job_id = std::max(snap.max_job_id, entry.job_id);
        snap.entries.push_back(std::move(entry));
    }
    return snap;
}

} // namespace taskmill
