#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "taskmill/errors.hpp"
#include "taskmill/util.hpp"

namespace taskmill {

// Merged, immutable view of one or more ini files plus CLI overrides.
//
// Sections and keys are case-insensitive; the stored canonical form is
// lower-case with single internal spaces. Later sources override earlier
// ones for the same (section, key); provenance records the winning source.
class ConfigView {
public:
    struct Entry {
        std::string section;
        std::string key;
        std::string value;
        std::string source; // "file:line" or "cli-override"
    };

    static std::string canon(std::string_view raw) { return squash_spaces(lower_copy(raw)); }

    void set(std::string_view section, std::string_view key, std::string value,
             std::string source) {
        auto s = canon(section), k = canon(key);
        auto it = index_.find({s, k});
        if (it == index_.end()) {
            index_.emplace(std::make_pair(s, k), entries_.size());
            entries_.push_back({s, k, std::move(value), std::move(source)});
        } else {
            entries_[it->second].value = std::move(value);
            entries_[it->second].source = std::move(source);
        }
        declared_.insert(s);
    }

    void declare_section(std::string_view section) { declared_.insert(canon(section)); }

    const std::vector<Entry>& entries() const { return entries_; }

    bool has_section(std::string_view section) const {
        return declared_.count(canon(section)) > 0;
    }

    const Entry* entry(std::string_view section, std::string_view key) const {
        auto it = index_.find({canon(section), canon(key)});
        return it == index_.end() ? nullptr : &entries_[it->second];
    }

    std::optional<std::string> find(std::string_view section, std::string_view key) const {
        const Entry* e = entry(section, key);
        if (!e) return std::nullopt;
        return e->value;
    }

    // First section in the scope chain that defines the key wins.
    std::optional<std::string> find_scoped(std::span<const std::string> scopes,
                                           std::string_view key) const {
        for (const auto& s : scopes)
            if (auto v = find(s, key)) return v;
        return std::nullopt;
    }

    std::string get(std::span<const std::string> scopes, std::string_view key) const {
        if (auto v = find_scoped(scopes, key)) return *v;
        throw MissingOption(std::string(key), join({scopes.begin(), scopes.end()}, ", "));
    }

    std::string get(std::span<const std::string> scopes, std::string_view key,
                    std::string_view default_value) const {
        if (auto v = find_scoped(scopes, key)) return *v;
        return std::string(default_value);
    }

    std::vector<std::string> section_keys(std::string_view section) const {
        std::vector<std::string> out;
        auto s = canon(section);
        for (const auto& e : entries_)
            if (e.section == s) out.push_back(e.key);
        return out;
    }

    // Canonical ini serialization: sections and keys sorted, multi-line
    // values written as indented continuations. Re-parsing it yields the
    // same entry set.
    std::string canonical_ini() const {
        std::map<std::string, std::map<std::string, const Entry*>> by_section;
        for (const auto& e : entries_) by_section[e.section][e.key] = &e;
        std::ostringstream out;
        bool first = true;
        for (const auto& [section, keys] : by_section) {
            if (!first) out << "\n";
            first = false;
            out << "[" << section << "]\n";
            for (const auto& [key, e] : keys) {
                auto lines = split(e->value, '\n');
                out << key << " = " << lines[0] << "\n";
                for (std::size_t i = 1; i < lines.size(); ++i)
                    out << "  " << lines[i] << "\n";
            }
        }
        return out.str();
    }

    // Flat sorted listing for --config-dump: one "section.key = value" line
    // per option, continuations indented.
    std::string dump_flat() const {
        std::map<std::pair<std::string, std::string>, const Entry*> sorted;
        for (const auto& e : entries_) sorted[{e.section, e.key}] = &e;
        std::ostringstream out;
        for (const auto& [sk, e] : sorted) {
            auto lines = split(e->value, '\n');
            out << sk.first << "." << sk.second << " = " << lines[0] << "\n";
            for (std::size_t i = 1; i < lines.size(); ++i) out << "  " << lines[i] << "\n";
        }
        return out.str();
    }

private:
    std::vector<Entry> entries_;
    std::map<std::pair<std::string, std::string>, std::size_t> index_;
    std::set<std::string> declared_;
};

namespace detail {

inline std::string strip_comment(std::string_view line) {
    auto pos = line.find(';');
    std::string out(pos == std::string_view::npos ? line : line.substr(0, pos));
    while (!out.empty() && (out.back() == '\r' || out.back() == '\n')) out.pop_back();
    return out;
}

class ConfigParser {
public:
    explicit ConfigParser(ConfigView& view) : view_(view) {}

    void parse_file(const std::filesystem::path& path) {
        namespace fs = std::filesystem;
        std::error_code ec;
        auto canonical = fs::weakly_canonical(path, ec).string();
        if (canonical.empty()) canonical = path.string();
        for (const auto& open : stack_)
            if (open == canonical)
                throw IncludeCycle(join(stack_, " -> ") + " -> " + canonical);
        stack_.push_back(canonical);
        parse_text(read_file(path), path);
        stack_.pop_back();
    }

    void parse_text(const std::string& text, const std::filesystem::path& origin) {
        std::string section = "global";
        std::string last_key; // receives continuations
        int lineno = 0;
        std::istringstream in(text);
        std::string raw;
        while (std::getline(in, raw)) {
            ++lineno;
            std::string line = strip_comment(raw);
            std::string body = trim(line);
            if (body.empty()) continue;

            if (!line.empty() && std::isspace(static_cast<unsigned char>(line[0]))) {
                if (last_key.empty())
                    throw SyntaxError(origin.string(), lineno,
                                      "continuation without a preceding option");
                auto* e = view_.entry(section, last_key);
                view_.set(section, last_key, e->value + "\n" + body,
                          origin.string() + ":" + std::to_string(lineno));
                continue;
            }

            if (body[0] == '[') {
                auto close = body.find(']');
                if (close == std::string::npos)
                    throw SyntaxError(origin.string(), lineno, "unterminated section header");
                section = ConfigView::canon(body.substr(1, close - 1));
                if (section.empty())
                    throw SyntaxError(origin.string(), lineno, "empty section name");
                view_.declare_section(section);
                last_key.clear();
                body = trim(body.substr(close + 1));
                if (body.empty()) continue; // fall through for "[section] key = value"
            }

            auto eq = body.find('=');
            if (eq == std::string::npos)
                throw SyntaxError(origin.string(), lineno,
                                  "expected section header, option or continuation");
            auto key = ConfigView::canon(body.substr(0, eq));
            if (key.empty())
                throw SyntaxError(origin.string(), lineno, "empty option name");
            auto value = trim(body.substr(eq + 1));

            if (section == "global" && key == "include") {
                for (const auto& inc : split_ws(value)) {
                    std::filesystem::path p(inc);
                    if (p.is_relative()) p = origin.parent_path() / p;
                    parse_file(p);
                }
                last_key.clear();
                continue;
            }

            view_.set(section, key, value, origin.string() + ":" + std::to_string(lineno));
            last_key = key;
        }
    }

private:
    ConfigView& view_;
    std::vector<std::string> stack_;
};

} // namespace detail

// Parses and merges ini files in order; CLI overrides ("section.key=value")
// rank above all files.
inline ConfigView parse_config(const std::vector<std::filesystem::path>& paths,
                               const std::vector<std::string>& cli_overrides = {}) {
    ConfigView view;
    detail::ConfigParser parser(view);
    for (const auto& p : paths) parser.parse_file(p);
    for (const auto& ov : cli_overrides) {
        auto eq = ov.find('=');
        auto dot = ov.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0)
            throw ConfigError("bad override '" + ov + "', expected section.key=value");
        view.set(ov.substr(0, dot), ov.substr(dot + 1, eq - dot - 1), trim(ov.substr(eq + 1)),
                 "cli-override");
    }
    return view;
}

inline ConfigView parse_config_text(const std::string& text,
                                    const std::string& origin = "<memory>") {
    ConfigView view;
    detail::ConfigParser parser(view);
    parser.parse_text(text, origin);
    return view;
}

// Deterministic digest over canonical (section, key, value) triples.
// Insensitive to entry order, comments, whitespace and key case.
inline std::string fingerprint(const ConfigView& view) {
    return hex64(fnv1a64(view.canonical_ini()));
}

inline std::string fingerprint(const ConfigView& view, const std::vector<std::string>& sections) {
    std::set<std::string> wanted;
    for (const auto& s : sections) wanted.insert(ConfigView::canon(s));
    std::map<std::pair<std::string, std::string>, const ConfigView::Entry*> sorted;
    for (const auto& e : view.entries())
        if (wanted.count(e.section)) sorted[{e.section, e.key}] = &e;
    std::string material;
    for (const auto& [sk, e] : sorted)
        material += sk.first + "\x1f" + sk.second + "\x1f" + e->value + "\x1e";
    return hex64(fnv1a64(material));
}

// Plugin categories mirroring the engine's extension points.
enum class PluginCategory { task, backend, provider, processor, partitioner, partition_processor };

inline std::string_view plugin_category_name(PluginCategory c) {
    switch (c) {
    case PluginCategory::task: return "task";
    case PluginCategory::backend: return "backend";
    case PluginCategory::provider: return "provider";
    case PluginCategory::processor: return "processor";
    case PluginCategory::partitioner: return "partitioner";
    case PluginCategory::partition_processor: return "partition processor";
    }
    return "?";
}

struct PluginSpec {
    PluginCategory category;
    std::string name;            // canonical lower-case
    std::string options_section; // section consulted for the plugin's options
};

} // namespace taskmill
