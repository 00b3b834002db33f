#pragma once

#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sot/errors.hpp"

namespace sot {

/// Flat key=value configuration. Files use one pair per line with '#'
/// comments; command-line pairs override file values.
struct KvConfig {
    std::map<std::string, std::string> values;

    void set(const std::string& key, const std::string& value) { values[key] = value; }
    bool has(const std::string& key) const { return values.count(key) != 0; }
};

KvConfig parse_config_file(const std::string& path);
void apply_key_value(KvConfig& cfg, const std::string& token);

/// Typed reads with defaults. Every read is recorded; finish() rejects keys
/// that were provided but never consumed, and echo() emits the resolved
/// configuration (defaults included) so every report embeds it.
class ConfigReader {
public:
    explicit ConfigReader(KvConfig cfg) : cfg_(std::move(cfg)) {}

    std::string get_string(const std::string& key, const std::string& fallback);
    double get_double(const std::string& key, double fallback);
    int get_int(const std::string& key, int fallback);
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
    std::vector<int> get_int_list(const std::string& key, const std::string& fallback);

    void finish() const; // throws ConfigError on unknown keys
    void echo(std::ostream& out, const std::string& prefix = "# config.") const;

private:
    std::string raw(const std::string& key, const std::string& fallback);

    KvConfig cfg_;
    std::set<std::string> consumed_;
    std::map<std::string, std::string> resolved_;
};

// Command entry points. Each returns the process exit code: 0 success,
// 1 test failure, 2 is reserved for ConfigError (thrown, mapped by run_cli).
int cmd_gradcheck(const KvConfig& cfg, std::ostream& out);
int cmd_prop1(const KvConfig& cfg, std::ostream& out);
int cmd_bench(const KvConfig& cfg, std::ostream& out);
int cmd_train(const KvConfig& cfg, std::ostream& out);
int cmd_pool_compare(const KvConfig& cfg, std::ostream& out);

/// Full argv dispatch: sot-head <command> [--config FILE] [--seed N]
/// [--out PATH] [key=value ...].
int run_cli(int argc, const char* const* argv);

} // namespace sot
