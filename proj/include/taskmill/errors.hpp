#pragma once

#include <stdexcept>
#include <string>

namespace taskmill {

// Root of all engine errors. The CLI maps the hierarchy to exit codes:
// ConfigError -> 1, LockHeld -> 2, anything else -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Problems caused by user input (config files, DSL, manifests, CLI args).
class ConfigError : public Error {
public:
    using Error::Error;
};

class MissingFile : public ConfigError {
public:
    explicit MissingFile(const std::string& path)
        : ConfigError("missing file: " + path), path(path) {}
    std::string path;
};

class IncludeCycle : public ConfigError {
public:
    explicit IncludeCycle(const std::string& chain)
        : ConfigError("include cycle: " + chain), chain(chain) {}
    std::string chain;
};

class SyntaxError : public ConfigError {
public:
    SyntaxError(const std::string& file, int line, const std::string& what)
        : ConfigError(file + ":" + std::to_string(line) + ": " + what),
          file(file), line(line) {}
    std::string file;
    int line;
};

class MissingOption : public ConfigError {
public:
    MissingOption(const std::string& key, const std::string& scopes)
        : ConfigError("missing option '" + key + "' in [" + scopes + "]"),
          key(key) {}
    std::string key;
};

class UnknownPlugin : public ConfigError {
public:
    UnknownPlugin(const std::string& category, const std::string& name,
                  const std::string& where)
        : ConfigError("unknown " + category + " plugin '" + name + "' (" + where + ")") {}
};

class DslSyntaxError : public ConfigError {
public:
    DslSyntaxError(std::size_t position, const std::string& what)
        : ConfigError("parameter expression, offset " + std::to_string(position) +
                      ": " + what),
          position(position) {}
    std::size_t position;
};

class UnknownSection : public ConfigError {
public:
    explicit UnknownSection(const std::string& section)
        : ConfigError("unknown parameter section '" + section + "'") {}
};

class LookupWithoutKey : public ConfigError {
public:
    explicit LookupWithoutKey(const std::string& what) : ConfigError(what) {}
};

class MalformedTuple : public ConfigError {
public:
    explicit MalformedTuple(const std::string& what) : ConfigError(what) {}
};

class MalformedLookupRule : public ConfigError {
public:
    explicit MalformedLookupRule(const std::string& what) : ConfigError(what) {}
};

class ManifestSyntaxError : public ConfigError {
public:
    ManifestSyntaxError(const std::string& file, int line, const std::string& what)
        : ConfigError(file + ":" + std::to_string(line) + ": " + what), line(line) {}
    int line;
};

class ProviderUnavailable : public ConfigError {
public:
    explicit ProviderUnavailable(const std::string& what) : ConfigError(what) {}
};

class ConsistencyError : public ConfigError {
public:
    ConsistencyError(const std::string& block, const std::string& reason)
        : ConfigError("dataset block " + block + ": " + reason), block(block) {}
    std::string block;
};

class MissingWorkUnits : public ConfigError {
public:
    explicit MissingWorkUnits(const std::string& url)
        : ConfigError("file has no work unit count: " + url) {}
};

class SelectorSyntaxError : public ConfigError {
public:
    explicit SelectorSyntaxError(const std::string& what) : ConfigError(what) {}
};

// Another instance holds the workdir lock.
class LockHeld : public Error {
public:
    explicit LockHeld(const std::string& what) : Error(what) {}
};

class CorruptSnapshot : public Error {
public:
    CorruptSnapshot(int line, const std::string& what)
        : Error("space snapshot, line " + std::to_string(line) + ": " + what),
          line(line) {}
    int line;
};

class UnknownPartitionId : public Error {
public:
    explicit UnknownPartitionId(long long id)
        : Error("unknown partition id " + std::to_string(id)) {}
};

class CorruptPartitionFile : public Error {
public:
    explicit CorruptPartitionFile(const std::string& what) : Error(what) {}
};

class InvalidPartition : public Error {
public:
    explicit InvalidPartition(long long id)
        : Error("partition " + std::to_string(id) + " is invalid") {}
};

class IllegalTransition : public Error {
public:
    IllegalTransition(const std::string& from, const std::string& to)
        : Error("illegal job transition " + from + " -> " + to) {}
};

class CorruptJobFile : public Error {
public:
    explicit CorruptJobFile(const std::string& what) : Error(what) {}
};

class SubmitFailed : public Error {
public:
    explicit SubmitFailed(const std::string& reason) : Error(reason) {}
};

class UnknownHandle : public Error {
public:
    explicit UnknownHandle(const std::string& handle)
        : Error("unknown backend handle: " + handle) {}
};

} // namespace taskmill
