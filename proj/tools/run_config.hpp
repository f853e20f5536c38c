#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

// Key=value run configuration with a fixed key registry. Values come from, in
// rising precedence: built-in defaults, --config=FILE files (applied in
// order), then --key=value flags. Unknown keys are rejected from both
// sources. Config files are key=value per line; blank lines and lines
// starting with '#' are skipped.
class RunConfig {
public:
    void define(const std::string& key, const std::string& def, const std::string& help);

    // Returns true when --help was among the arguments (nothing else is
    // applied in that case). Throws std::runtime_error on malformed flags or
    // unknown keys.
    bool parse(const std::vector<std::string>& args);

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);

    const std::string& str(const std::string& key) const;
    double num(const std::string& key) const;
    std::uint64_t u64(const std::string& key) const;
    long i64(const std::string& key) const;
    std::vector<double> num_list(const std::string& key) const; // comma-separated

    std::string help_text() const; // one "key=default  help" line per key
    std::string echo() const;      // resolved key=value lines, sorted

private:
    struct Entry {
        std::string value;
        std::string def;
        std::string help;
    };
    const Entry& get(const std::string& key) const;
    std::map<std::string, Entry> entries_;
};
