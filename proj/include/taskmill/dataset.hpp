#pragma once

#include <cstdint>
#include <filesystem>
#include <fnmatch.h>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "taskmill/errors.hpp"
#include "taskmill/util.hpp"

namespace taskmill {

// One input file of a dataset block. work_units counts events or bytes;
// the unit is chosen per dataset and uniform within a block.
struct FileEntry {
    std::string url;
    std::optional<std::int64_t> work_units;
    std::map<std::string, std::string> metadata;

    bool operator==(const FileEntry&) const = default;
};

// Provider-defined group of files from one dataset sharing locality.
// Absent locations mean the block can run anywhere.
struct DatasetBlock {
    std::string dataset;
    std::string block_id;
    std::string nickname;
    std::optional<std::vector<std::string>> locations;
    std::vector<FileEntry> files;

    std::string key() const { return dataset + "#" + block_id; }

    bool operator==(const DatasetBlock&) const = default;
};

inline std::string dataset_nickname(std::string_view dataset) {
    std::string nick(dataset);
    while (!nick.empty() && nick.front() == '/') nick.erase(nick.begin());
    for (auto& c : nick)
        if (c == '/') c = '_';
    return nick.empty() ? "dataset" : nick;
}

// --- providers ---------------------------------------------------------------

struct ProviderSpec {
    std::string kind;   // "list" | "scan" | "synthetic"
    std::string source; // manifest path or directory to scan
    // synthetic generator knobs
    int datasets = 9;
    int blocks_per_dataset = 1;
    int files_per_block = 99;
    std::uint64_t seed = 0;
    std::int64_t min_units = 100;
    std::int64_t max_units = 1000;
};

namespace detail {

// Manifest grammar, one block per header:
//   [dataset_name#block_id]
//   locations = site1 site2          (optional)
//   url [work_units [key=value ...]]
// '#' starts a comment.
inline std::vector<DatasetBlock> parse_manifest(const std::string& text,
                                                const std::string& origin) {
    std::vector<DatasetBlock> blocks;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    // '#' starts a comment at line start or after whitespace; the '#' inside
    // a [dataset#block] header or a url is data.
    auto strip_comment = [](const std::string& s) {
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] == '#' && (i == 0 || std::isspace(static_cast<unsigned char>(s[i - 1]))))
                return s.substr(0, i);
        return s;
    };
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;

        if (line[0] == '[') {
            auto close = line.find(']');
            if (close == std::string::npos)
                throw ManifestSyntaxError(origin, lineno, "unterminated block header");
            auto name = line.substr(1, close - 1);
            auto sep = name.find('#');
            if (sep == std::string::npos || sep == 0 || sep + 1 == name.size())
                throw ManifestSyntaxError(origin, lineno,
                                          "block header must be [dataset#block_id]");
            DatasetBlock block;
            block.dataset = trim(name.substr(0, sep));
            block.block_id = trim(name.substr(sep + 1));
            block.nickname = dataset_nickname(block.dataset);
            blocks.push_back(std::move(block));
            continue;
        }

        if (blocks.empty())
            throw ManifestSyntaxError(origin, lineno, "file entry before any block header");

        if (lower_copy(line).rfind("locations", 0) == 0) {
            auto eq = line.find('=');
            if (eq != std::string::npos && trim(lower_copy(line.substr(0, eq))) == "locations") {
                blocks.back().locations = split_ws(line.substr(eq + 1));
                continue;
            }
        }

        auto tokens = split_ws(line);
        FileEntry file;
        file.url = tokens[0];
        std::size_t meta_start = 1;
        if (tokens.size() > 1 && tokens[1].find('=') == std::string::npos) {
            std::int64_t units;
            try {
                units = parse_i64(tokens[1], "work units");
            } catch (const ConfigError&) {
                throw ManifestSyntaxError(origin, lineno,
                                          "bad work unit count '" + tokens[1] + "'");
            }
            file.work_units = units;
            meta_start = 2;
        }
        for (std::size_t i = meta_start; i < tokens.size(); ++i) {
            auto eq = tokens[i].find('=');
            if (eq == std::string::npos || eq == 0)
                throw ManifestSyntaxError(origin, lineno,
                                          "bad metadata token '" + tokens[i] + "'");
            file.metadata[tokens[i].substr(0, eq)] = tokens[i].substr(eq + 1);
        }
        for (const auto& f : blocks.back().files)
            if (f.url == file.url)
                throw ManifestSyntaxError(origin, lineno,
                                          "duplicate url within block: " + file.url);
        blocks.back().files.push_back(std::move(file));
    }
    return blocks;
}

inline std::vector<DatasetBlock> scan_directory(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root))
        throw ProviderUnavailable("not a directory: " + root.string());
    DatasetBlock block;
    block.dataset = root.string();
    block.block_id = "0";
    block.nickname = dataset_nickname(root.filename().string());
    std::vector<fs::path> paths;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file()) paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
        FileEntry file;
        file.url = p.string();
        file.work_units = static_cast<std::int64_t>(fs::file_size(p));
        block.files.push_back(std::move(file));
    }
    if (block.files.empty()) return {};
    return {std::move(block)};
}

inline std::vector<DatasetBlock> synthesize_blocks(const ProviderSpec& spec) {
    std::vector<DatasetBlock> blocks;
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<std::int64_t> units(spec.min_units, spec.max_units);
    for (int d = 0; d < spec.datasets; ++d) {
        for (int b = 0; b < spec.blocks_per_dataset; ++b) {
            DatasetBlock block;
            block.dataset = "/synthetic/dataset" + std::to_string(d);
            block.block_id = "block" + std::to_string(b);
            block.nickname = dataset_nickname(block.dataset);
            for (int f = 0; f < spec.files_per_block; ++f) {
                FileEntry file;
                file.url = block.dataset + "/" + block.block_id + "/file" +
                           std::to_string(f) + ".dat";
                file.work_units = units(rng);
                block.files.push_back(std::move(file));
            }
            blocks.push_back(std::move(block));
        }
    }
    return blocks;
}

} // namespace detail

inline std::vector<DatasetBlock> provide_blocks(const ProviderSpec& spec) {
    if (spec.kind == "list")
        return detail::parse_manifest(read_file(spec.source), spec.source);
    if (spec.kind == "scan") return detail::scan_directory(spec.source);
    if (spec.kind == "synthetic") return detail::synthesize_blocks(spec);
    throw UnknownPlugin("provider", spec.kind, "dataset provider");
}

// Serializes blocks back into manifest form; used to persist the previous
// scan for change detection across runs.
inline std::string write_manifest(std::span<const DatasetBlock> blocks) {
    std::ostringstream out;
    for (const auto& block : blocks) {
        out << "[" << block.dataset << "#" << block.block_id << "]\n";
        if (block.locations) out << "locations = " << join(*block.locations, " ") << "\n";
        for (const auto& file : block.files) {
            out << file.url;
            if (file.work_units) out << " " << *file.work_units;
            for (const auto& [k, v] : file.metadata) out << " " << k << "=" << v;
            out << "\n";
        }
    }
    return out.str();
}

// --- dataset processors -------------------------------------------------------

struct ProcessorSpec {
    std::string name; // url-filter | metadata-filter | location-blacklist | dedup | consistency-check
    std::vector<std::string> url_exclude; // globs dropped by url-filter
    std::vector<std::string> url_include; // if non-empty, only matching urls survive
    std::string meta_key;
    std::set<std::string> meta_keep;
    std::vector<std::string> site_blacklist;
    bool require_units = false; // consistency-check rejects missing counts
};

namespace detail {

inline bool glob_match(const std::string& pattern, const std::string& text) {
    return ::fnmatch(pattern.c_str(), text.c_str(), 0) == 0;
}

inline void apply_url_filter(std::vector<DatasetBlock>& blocks, const ProcessorSpec& spec) {
    for (auto& block : blocks) {
        std::erase_if(block.files, [&](const FileEntry& f) {
            for (const auto& pat : spec.url_exclude)
                if (glob_match(pat, f.url)) return true;
            if (!spec.url_include.empty()) {
                for (const auto& pat : spec.url_include)
                    if (glob_match(pat, f.url)) return false;
                return true;
            }
            return false;
        });
    }
}

inline void apply_metadata_filter(std::vector<DatasetBlock>& blocks, const ProcessorSpec& spec) {
    for (auto& block : blocks) {
        std::erase_if(block.files, [&](const FileEntry& f) {
            auto it = f.metadata.find(spec.meta_key);
            if (it == f.metadata.end()) return true;
            return spec.meta_keep.count(it->second) == 0;
        });
    }
}

inline void apply_location_blacklist(std::vector<DatasetBlock>& blocks,
                                     const ProcessorSpec& spec) {
    for (auto& block : blocks) {
        if (!block.locations) continue;
        std::erase_if(*block.locations, [&](const std::string& site) {
            for (const auto& bad : spec.site_blacklist)
                if (site == bad) return true;
            return false;
        });
    }
}

inline void apply_dedup(std::vector<DatasetBlock>& blocks) {
    std::set<std::string> seen;
    for (auto& block : blocks) {
        std::erase_if(block.files,
                      [&](const FileEntry& f) { return !seen.insert(f.url).second; });
    }
}

inline void apply_consistency_check(const std::vector<DatasetBlock>& blocks,
                                    const ProcessorSpec& spec) {
    for (const auto& block : blocks) {
        for (const auto& file : block.files) {
            if (file.work_units && *file.work_units < 0)
                throw ConsistencyError(block.key(),
                                       "negative work units for " + file.url);
            if (spec.require_units && !file.work_units)
                throw ConsistencyError(block.key(), "missing work units for " + file.url);
        }
    }
}

} // namespace detail

// Applies the processor chain in listed order; blocks emptied of all files
// are dropped afterwards. Every processor is a pure function of its input.
inline std::vector<DatasetBlock> run_dataset_processors(std::vector<DatasetBlock> blocks,
                                                        std::span<const ProcessorSpec> chain) {
    for (const auto& spec : chain) {
        if (spec.name == "url-filter") detail::apply_url_filter(blocks, spec);
        else if (spec.name == "metadata-filter") detail::apply_metadata_filter(blocks, spec);
        else if (spec.name == "location-blacklist") detail::apply_location_blacklist(blocks, spec);
        else if (spec.name == "dedup") detail::apply_dedup(blocks);
        else if (spec.name == "consistency-check") detail::apply_consistency_check(blocks, spec);
        else throw UnknownPlugin("processor", spec.name, "dataset processors");
    }
    std::erase_if(blocks, [](const DatasetBlock& b) { return b.files.empty(); });
    return blocks;
}

// --- change detection ----------------------------------------------------------

struct DatasetDelta {
    std::vector<std::pair<std::string, std::string>> added_files;   // (block key, url)
    std::vector<std::pair<std::string, std::string>> removed_files; // (block key, url)
    struct Resized {
        std::string block_key;
        std::string url;
        std::int64_t old_units = -1; // -1 when previously unknown
        std::int64_t new_units = -1;
        bool operator==(const Resized&) const = default;
    };
    std::vector<Resized> resized_files;
    std::vector<std::string> added_blocks;
    std::vector<std::string> removed_blocks;

    bool empty() const {
        return added_files.empty() && removed_files.empty() && resized_files.empty() &&
               added_blocks.empty() && removed_blocks.empty();
    }
};

// Files are keyed by (block key, url). Unit-count changes surface as
// resized entries; blocks appearing or vanishing are tracked separately,
// with their files counted as added/removed as well.
inline DatasetDelta compute_delta(std::span<const DatasetBlock> old_blocks,
                                  std::span<const DatasetBlock> new_blocks) {
    DatasetDelta delta;
    std::map<std::string, const DatasetBlock*> old_by_key, new_by_key;
    for (const auto& b : old_blocks) old_by_key[b.key()] = &b;
    for (const auto& b : new_blocks) new_by_key[b.key()] = &b;

    for (const auto& b : old_blocks)
        if (!new_by_key.count(b.key())) {
            delta.removed_blocks.push_back(b.key());
            for (const auto& f : b.files) delta.removed_files.emplace_back(b.key(), f.url);
        }

    for (const auto& nb : new_blocks) {
        auto it = old_by_key.find(nb.key());
        if (it == old_by_key.end()) {
            delta.added_blocks.push_back(nb.key());
            for (const auto& f : nb.files) delta.added_files.emplace_back(nb.key(), f.url);
            continue;
        }
        const auto& ob = *it->second;
        std::map<std::string, const FileEntry*> old_files;
        for (const auto& f : ob.files) old_files[f.url] = &f;
        std::set<std::string> seen;
        for (const auto& nf : nb.files) {
            seen.insert(nf.url);
            auto fit = old_files.find(nf.url);
            if (fit == old_files.end()) {
                delta.added_files.emplace_back(nb.key(), nf.url);
                continue;
            }
            auto old_units = fit->second->work_units.value_or(-1);
            auto new_units = nf.work_units.value_or(-1);
            if (old_units != new_units)
                delta.resized_files.push_back({nb.key(), nf.url, old_units, new_units});
        }
        for (const auto& of : ob.files)
            if (!seen.count(of.url)) delta.removed_files.emplace_back(nb.key(), of.url);
    }
    return delta;
}

} // namespace taskmill
