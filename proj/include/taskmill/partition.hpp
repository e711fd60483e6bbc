#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taskmill/dataset.hpp"
#include "taskmill/errors.hpp"
#include "taskmill/paramspace.hpp"
#include "taskmill/util.hpp"

namespace taskmill {

enum class PartitionState : std::uint8_t { valid = 0, invalid = 1 };

// A contiguous slice of one block's work, assigned to exactly one job.
// skip_units offsets into the first file; num_units counts the total units
// covered across the listed files, or -1 when the files carry no unit
// counts (whole files are processed then). The metadata key "file units"
// records each file's length at partition time so slices stay computable
// after the source changes.
struct Partition {
    std::int64_t partition_id = -1;
    std::string dataset;
    std::string block_id;
    std::string nickname;
    std::vector<std::string> file_urls;
    std::int64_t skip_units = 0;
    std::int64_t num_units = -1;
    std::optional<std::vector<std::string>> locations;
    std::map<std::string, std::string> metadata;
    PartitionState state = PartitionState::valid;

    std::string block_key() const { return dataset + "#" + block_id; }

    bool operator==(const Partition&) const = default;
};

inline constexpr std::string_view kFileUnitsKey = "file units";

// Per-file unit counts recorded at partition time; -1 marks files without
// counts. Size always matches file_urls.
inline std::vector<std::int64_t> partition_file_units(const Partition& p) {
    std::vector<std::int64_t> units;
    auto it = p.metadata.find(std::string(kFileUnitsKey));
    if (it != p.metadata.end())
        for (const auto& tok : split_ws(it->second)) units.push_back(parse_i64(tok, "file units"));
    units.resize(p.file_urls.size(), -1);
    return units;
}

// Unit range [begin, end) the partition covers in each listed file,
// derived from skip/num and the recorded file lengths.
inline std::vector<std::pair<std::int64_t, std::int64_t>> partition_slices(const Partition& p) {
    auto units = partition_file_units(p);
    std::vector<std::pair<std::int64_t, std::int64_t>> slices;
    std::int64_t remaining = p.num_units;
    std::int64_t offset = p.skip_units;
    for (std::size_t i = 0; i < p.file_urls.size(); ++i) {
        if (p.num_units < 0 || units[i] < 0) {
            // unknown counts: whole-file coverage
            slices.emplace_back(0, units[i]);
            offset = 0;
            continue;
        }
        std::int64_t avail = units[i] - offset;
        std::int64_t take = std::min(avail, remaining);
        slices.emplace_back(offset, offset + take);
        remaining -= take;
        offset = 0;
    }
    return slices;
}

// --- partition plugins --------------------------------------------------------

struct PartitionerSpec {
    std::string name; // block-boundary | file-count | work-unit | metadata-group | hybrid
    std::int64_t files_per_partition = 100; // F
    std::int64_t units_per_partition = 10000; // W
    std::string group_key; // metadata-group
};

namespace detail {

// Outstanding work in one file: units [begin, end), or the whole file when
// end < 0 (no unit count). file_units is the file's current total length.
struct WorkRange {
    const FileEntry* file = nullptr;
    std::int64_t begin = 0;
    std::int64_t end = -1;
    std::int64_t file_units = -1;

    bool whole_file() const { return begin == 0 && end == file_units; }
    bool reaches_file_end() const { return file_units >= 0 ? end == file_units : true; }
    std::int64_t size() const { return end - begin; }
};

// Builds partitions over ranges of one block. A partition's files are
// consumed sequentially (skip into the first file, stop after num units),
// so a range can only be appended when the previous one reaches its file's
// end and the new one starts at offset 0.
class PartitionBuilder {
public:
    PartitionBuilder(const DatasetBlock& block, std::int64_t& next_id,
                     std::vector<Partition>& out)
        : block_(block), next_id_(next_id), out_(out) {}

    bool can_extend(const WorkRange& range) const {
        if (ranges_.empty()) return true;
        return ranges_.back().reaches_file_end() && range.begin == 0;
    }

    void add(const WorkRange& range) {
        ranges_.push_back(range);
    }

    void flush(std::map<std::string, std::string> extra_metadata = {}) {
        if (ranges_.empty()) return;
        Partition p;
        p.partition_id = next_id_++;
        p.dataset = block_.dataset;
        p.block_id = block_.block_id;
        p.nickname = block_.nickname;
        p.locations = block_.locations;
        p.skip_units = ranges_.front().begin;
        std::int64_t total = 0;
        bool known = true;
        std::string lengths;
        for (const auto& r : ranges_) {
            p.file_urls.push_back(r.file->url);
            if (!lengths.empty()) lengths += ' ';
            lengths += std::to_string(r.file_units);
            if (r.end < 0 || r.file_units < 0) known = false;
            else total += r.size();
        }
        p.num_units = known ? total : -1;
        p.metadata = std::move(extra_metadata);
        p.metadata[std::string(kFileUnitsKey)] = lengths;
        out_.push_back(std::move(p));
        ranges_.clear();
    }

    std::size_t range_count() const { return ranges_.size(); }
    std::int64_t unit_count() const {
        std::int64_t total = 0;
        for (const auto& r : ranges_) {
            if (r.end < 0) return -1;
            total += r.size();
        }
        return total;
    }

private:
    const DatasetBlock& block_;
    std::int64_t& next_id_;
    std::vector<Partition>& out_;
    std::vector<WorkRange> ranges_;
};

inline void partition_by_group(const DatasetBlock& block, std::span<const WorkRange> ranges,
                               std::int64_t& next_id, std::vector<Partition>& out,
                               std::size_t max_ranges) {
    PartitionBuilder builder(block, next_id, out);
    for (const auto& range : ranges) {
        if (builder.range_count() >= max_ranges || !builder.can_extend(range)) builder.flush();
        builder.add(range);
    }
    builder.flush();
}

inline void partition_by_units(const DatasetBlock& block, std::span<const WorkRange> ranges,
                               std::int64_t& next_id, std::vector<Partition>& out,
                               std::int64_t target) {
    PartitionBuilder builder(block, next_id, out);
    for (const auto& range : ranges) {
        if (range.end < 0 || range.file_units < 0) throw MissingWorkUnits(range.file->url);
        std::int64_t pos = range.begin;
        while (pos < range.end) {
            if (!builder.can_extend({range.file, pos, range.end, range.file_units}))
                builder.flush();
            std::int64_t budget = target - builder.unit_count();
            std::int64_t take = std::min(budget, range.end - pos);
            builder.add({range.file, pos, pos + take, range.file_units});
            pos += take;
            if (builder.unit_count() >= target) builder.flush();
        }
    }
    builder.flush();
}

inline void partition_by_metadata(const DatasetBlock& block, std::span<const WorkRange> ranges,
                                  std::int64_t& next_id, std::vector<Partition>& out,
                                  const std::string& key) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<WorkRange>> groups;
    for (const auto& range : ranges) {
        auto it = range.file->metadata.find(key);
        std::string value = it == range.file->metadata.end() ? std::string() : it->second;
        if (!groups.count(value)) order.push_back(value);
        groups[value].push_back(range);
    }
    for (const auto& value : order) {
        PartitionBuilder builder(block, next_id, out);
        for (const auto& range : groups[value]) {
            if (!builder.can_extend(range)) builder.flush({{key, value}});
            builder.add(range);
        }
        builder.flush({{key, value}});
    }
}

inline void partition_hybrid(const DatasetBlock& block, std::span<const WorkRange> ranges,
                             std::int64_t& next_id, std::vector<Partition>& out,
                             std::int64_t max_files, std::int64_t target_units) {
    // file-count pass first, then work-unit refinement of oversized chunks
    std::vector<Partition> coarse;
    std::int64_t scratch_id = 0;
    partition_by_group(block, ranges, scratch_id, coarse,
                       static_cast<std::size_t>(max_files));
    std::size_t cursor = 0;
    for (const auto& chunk : coarse) {
        std::size_t n = chunk.file_urls.size();
        std::span<const WorkRange> chunk_ranges = ranges.subspan(cursor, n);
        cursor += n;
        if (chunk.num_units >= 0 && chunk.num_units > target_units) {
            partition_by_units(block, chunk_ranges, next_id, out, target_units);
        } else {
            PartitionBuilder builder(block, next_id, out);
            for (const auto& r : chunk_ranges) builder.add(r);
            builder.flush();
        }
    }
}

inline void partition_ranges(const DatasetBlock& block, std::span<const WorkRange> ranges,
                             const PartitionerSpec& spec, std::int64_t& next_id,
                             std::vector<Partition>& out) {
    if (ranges.empty()) return;
    if (spec.name == "block-boundary")
        partition_by_group(block, ranges, next_id, out, ranges.size());
    else if (spec.name == "file-count")
        partition_by_group(block, ranges, next_id, out,
                           static_cast<std::size_t>(spec.files_per_partition));
    else if (spec.name == "work-unit")
        partition_by_units(block, ranges, next_id, out, spec.units_per_partition);
    else if (spec.name == "metadata-group")
        partition_by_metadata(block, ranges, next_id, out, spec.group_key);
    else if (spec.name == "hybrid")
        partition_hybrid(block, ranges, next_id, out, spec.files_per_partition,
                         spec.units_per_partition);
    else
        throw UnknownPlugin("partitioner", spec.name, "dataset partitioner");
}

inline std::vector<WorkRange> whole_file_ranges(const DatasetBlock& block) {
    std::vector<WorkRange> ranges;
    for (const auto& file : block.files) {
        std::int64_t units = file.work_units.value_or(-1);
        if (units == 0) continue; // nothing to process
        ranges.push_back({&file, 0, units, units});
    }
    return ranges;
}

} // namespace detail

// Splits processed blocks into partitions. Partitions never cross block
// boundaries; order follows block order, then offset order. Ids are
// assigned sequentially starting at first_id.
inline std::vector<Partition> partition_blocks(std::span<const DatasetBlock> blocks,
                                               const PartitionerSpec& spec,
                                               std::int64_t first_id = 0) {
    std::vector<Partition> out;
    std::int64_t next_id = first_id;
    for (const auto& block : blocks) {
        auto ranges = detail::whole_file_ranges(block);
        detail::partition_ranges(block, ranges, spec, next_id, out);
    }
    return out;
}

// --- partition store ------------------------------------------------------------
//
// File layout: 8-byte magic, u32 version, u64 count, then count little-endian
// u64 byte offsets, then length-prefixed records. partition_id equals the
// index position, so a single load reads the header, one index entry and one
// record.

inline constexpr char kPartitionMagic[8] = {'T', 'M', 'P', 'A', 'R', 'T', '0', '1'};
inline constexpr std::uint32_t kPartitionVersion = 1;

namespace detail {

inline std::string encode_partition(const Partition& p) {
    std::string out;
    put_i64(out, p.partition_id);
    put_str(out, p.dataset);
    put_str(out, p.block_id);
    put_str(out, p.nickname);
    put_i64(out, p.skip_units);
    put_i64(out, p.num_units);
    out.push_back(static_cast<char>(p.state));
    out.push_back(p.locations ? 1 : 0);
    if (p.locations) {
        put_u32(out, static_cast<std::uint32_t>(p.locations->size()));
        for (const auto& s : *p.locations) put_str(out, s);
    }
    put_u32(out, static_cast<std::uint32_t>(p.file_urls.size()));
    for (const auto& u : p.file_urls) put_str(out, u);
    put_u32(out, static_cast<std::uint32_t>(p.metadata.size()));
    for (const auto& [k, v] : p.metadata) {
        put_str(out, k);
        put_str(out, v);
    }
    return out;
}

inline Partition decode_partition(std::string_view payload, std::string_view what) {
    BinReader in(payload, what);
    Partition p;
    p.partition_id = in.i64();
    p.dataset = in.str();
    p.block_id = in.str();
    p.nickname = in.str();
    p.skip_units = in.i64();
    p.num_units = in.i64();
    p.state = static_cast<PartitionState>(in.u8());
    if (in.u8()) {
        std::vector<std::string> locations(in.u32());
        for (auto& s : locations) s = in.str();
        p.locations = std::move(locations);
    }
    p.file_urls.resize(in.u32());
    for (auto& u : p.file_urls) u = in.str();
    auto meta_count = in.u32();
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        auto k = in.str();
        p.metadata[k] = in.str();
    }
    if (!in.at_end())
        throw CorruptPartitionFile("trailing bytes in record of " + std::string(what));
    return p;
}

} // namespace detail

inline void store_partitions(std::span<const Partition> parts,
                             const std::filesystem::path& path) {
    std::string records;
    std::vector<std::uint64_t> offsets;
    const std::size_t header_size = 8 + 4 + 8;
    const std::size_t index_size = parts.size() * 8;
    for (const auto& p : parts) {
        offsets.push_back(header_size + index_size + records.size());
        auto payload = detail::encode_partition(p);
        put_u32(records, static_cast<std::uint32_t>(payload.size()));
        records += payload;
    }
    std::string out;
    out.reserve(header_size + index_size + records.size());
    out.append(kPartitionMagic, sizeof kPartitionMagic);
    put_u32(out, kPartitionVersion);
    put_u64(out, parts.size());
    for (auto off : offsets) put_u64(out, off);
    out += records;
    atomic_write_file(path, out);
}

// Random-access reader; counts the bytes it touches so tests can verify
// that single loads stay sub-linear in file size.
class PartitionReader {
public:
    explicit PartitionReader(std::filesystem::path path) : path_(std::move(path)) {
        in_.open(path_, std::ios::binary);
        if (!in_) throw MissingFile(path_.string());
        char header[20];
        read_at(0, header, sizeof header);
        if (std::string_view(header, 8) != std::string_view(kPartitionMagic, 8))
            throw CorruptPartitionFile("bad magic in " + path_.string());
        std::uint32_t version = 0;
        for (int i = 3; i >= 0; --i)
            version = (version << 8) | static_cast<unsigned char>(header[8 + i]);
        if (version != kPartitionVersion)
            throw CorruptPartitionFile("unsupported version in " + path_.string());
        count_ = 0;
        for (int i = 7; i >= 0; --i)
            count_ = (count_ << 8) | static_cast<unsigned char>(header[12 + i]);
    }

    std::int64_t count() const { return static_cast<std::int64_t>(count_); }
    std::size_t bytes_read() const { return bytes_read_; }

    Partition load(std::int64_t id) {
        if (id < 0 || static_cast<std::uint64_t>(id) >= count_) throw UnknownPartitionId(id);
        char entry[8];
        read_at(20 + static_cast<std::uint64_t>(id) * 8, entry, 8);
        std::uint64_t offset = 0;
        for (int i = 7; i >= 0; --i)
            offset = (offset << 8) | static_cast<unsigned char>(entry[i]);
        char lenbuf[4];
        read_at(offset, lenbuf, 4);
        std::uint32_t len = 0;
        for (int i = 3; i >= 0; --i)
            len = (len << 8) | static_cast<unsigned char>(lenbuf[i]);
        std::string payload(len, '\0');
        read_at(offset + 4, payload.data(), len);
        auto p = detail::decode_partition(payload, path_.string());
        if (p.partition_id != id)
            throw CorruptPartitionFile("record id mismatch at index " + std::to_string(id));
        return p;
    }

private:
    void read_at(std::uint64_t offset, char* buf, std::size_t n) {
        in_.clear();
        in_.seekg(static_cast<std::streamoff>(offset));
        in_.read(buf, static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n))
            throw CorruptPartitionFile("truncated read in " + path_.string());
        bytes_read_ += n;
    }

    std::filesystem::path path_;
    std::ifstream in_;
    std::uint64_t count_ = 0;
    std::size_t bytes_read_ = 0;
};

inline Partition load_partition(const std::filesystem::path& path, std::int64_t id) {
    PartitionReader reader(path);
    return reader.load(id);
}

inline std::vector<Partition> load_all_partitions(const std::filesystem::path& path) {
    PartitionReader reader(path);
    std::vector<Partition> out;
    out.reserve(static_cast<std::size_t>(reader.count()));
    for (std::int64_t id = 0; id < reader.count(); ++id) out.push_back(reader.load(id));
    return out;
}

// --- resync ----------------------------------------------------------------------

struct ResyncResult {
    std::vector<std::int64_t> kept;        // previously valid partitions still valid
    std::vector<std::int64_t> invalidated; // newly invalidated ids
    std::vector<Partition> appended;       // fresh partitions over uncovered work
};

// Propagates dataset changes into the partition set. A partition is
// invalidated iff it references a removed file, a file in a removed block,
// or a shrunk file its slice no longer fits into. Partitions over grown
// files stay valid; the grown tail, new files and the still-existing slices
// of invalidated partitions are repartitioned with fresh append-only ids.
inline ResyncResult resync_partitions(std::span<const Partition> parts,
                                      const DatasetDelta& delta,
                                      std::span<const DatasetBlock> new_blocks,
                                      const PartitionerSpec& spec) {
    ResyncResult result;
    std::set<std::pair<std::string, std::string>> removed;
    for (const auto& [bk, url] : delta.removed_files) removed.insert({bk, url});
    std::set<std::string> removed_blocks(delta.removed_blocks.begin(),
                                         delta.removed_blocks.end());
    std::map<std::pair<std::string, std::string>, std::int64_t> shrunk;
    for (const auto& r : delta.resized_files)
        if (r.old_units >= 0 && r.new_units >= 0 && r.new_units < r.old_units)
            shrunk[{r.block_key, r.url}] = r.new_units;

    // coverage of the new scan by kept partitions
    std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::int64_t, std::int64_t>>>
        covered;
    std::set<std::pair<std::string, std::string>> covered_whole;
    std::int64_t next_id = -1;

    for (const auto& p : parts) {
        next_id = std::max(next_id, p.partition_id);
        if (p.state != PartitionState::valid) continue;
        auto bk = p.block_key();
        bool valid = !removed_blocks.count(bk);
        auto slices = partition_slices(p);
        for (std::size_t i = 0; valid && i < p.file_urls.size(); ++i) {
            std::pair<std::string, std::string> key{bk, p.file_urls[i]};
            if (removed.count(key)) valid = false;
            auto sit = shrunk.find(key);
            if (sit != shrunk.end() && slices[i].second > sit->second) valid = false;
        }
        if (!valid) {
            result.invalidated.push_back(p.partition_id);
            continue;
        }
        result.kept.push_back(p.partition_id);
        for (std::size_t i = 0; i < p.file_urls.size(); ++i) {
            std::pair<std::string, std::string> key{bk, p.file_urls[i]};
            if (slices[i].second < 0) covered_whole.insert(key);
            else covered[key].emplace_back(slices[i]);
        }
    }
    ++next_id;

    for (const auto& block : new_blocks) {
        std::vector<detail::WorkRange> residual;
        for (const auto& file : block.files) {
            std::pair<std::string, std::string> key{block.key(), file.url};
            std::int64_t units = file.work_units.value_or(-1);
            if (units < 0) {
                if (!covered_whole.count(key) && !covered.count(key))
                    residual.push_back({&file, 0, -1, -1});
                continue;
            }
            if (covered_whole.count(key)) continue;
            auto it = covered.find(key);
            std::vector<std::pair<std::int64_t, std::int64_t>> used;
            if (it != covered.end()) used = it->second;
            std::sort(used.begin(), used.end());
            std::int64_t pos = 0;
            for (const auto& [b, e] : used) {
                if (b > pos) residual.push_back({&file, pos, std::min(b, units), units});
                pos = std::max(pos, e);
                if (pos >= units) break;
            }
            if (pos < units) residual.push_back({&file, pos, units, units});
        }
        detail::partition_ranges(block, residual, spec, next_id, result.appended);
    }
    return result;
}

// --- partition processors ----------------------------------------------------------

struct PartitionProcessorSpec {
    std::string name; // lfn-to-pfn | location-blacklist
    std::vector<std::pair<std::string, std::string>> prefix_map; // longest match rewrites
    std::vector<std::string> site_blacklist;
};

// Translates one valid partition into the variables and requirements of a
// parameter space point: FILE_NAMES, SKIP_EVENTS, MAX_EVENTS, DATASET,
// DATASET_NICK plus a LOCATION requirement when the partition is pinned.
inline ParameterPoint partition_to_point(const Partition& part,
                                         std::span<const PartitionProcessorSpec> chain = {}) {
    if (part.state != PartitionState::valid) throw InvalidPartition(part.partition_id);

    auto urls = part.file_urls;
    auto locations = part.locations;
    for (const auto& proc : chain) {
        if (proc.name == "lfn-to-pfn") {
            for (auto& url : urls) {
                const std::pair<std::string, std::string>* best = nullptr;
                for (const auto& rule : proc.prefix_map)
                    if (url.rfind(rule.first, 0) == 0 &&
                        (!best || rule.first.size() > best->first.size()))
                        best = &rule;
                if (best) url = best->second + url.substr(best->first.size());
            }
        } else if (proc.name == "location-blacklist") {
            if (locations) {
                std::erase_if(*locations, [&](const std::string& site) {
                    for (const auto& bad : proc.site_blacklist)
                        if (site == bad) return true;
                    return false;
                });
            }
        } else {
            throw UnknownPlugin("partition processor", proc.name, "partition processors");
        }
    }

    ParameterPoint point;
    point.values["FILE_NAMES"] = join(urls, " ");
    point.values["SKIP_EVENTS"] = std::to_string(part.skip_units);
    if (part.num_units >= 0) point.values["MAX_EVENTS"] = std::to_string(part.num_units);
    point.values["DATASET"] = part.dataset;
    point.values["DATASET_NICK"] = part.nickname;
    if (locations) point.requirements.locations = locations;
    point.partition_id = part.partition_id;
    return point;
}

} // namespace taskmill
