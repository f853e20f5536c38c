#include "run_config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

void RunConfig::define(const std::string& key, const std::string& def,
                       const std::string& help) {
    entries_[key] = Entry{def, def, help};
}

const RunConfig::Entry& RunConfig::get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw std::runtime_error("unknown config key '" + key + "'");
    return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw std::runtime_error("unknown config key '" + key + "'");
    it->second.value = value;
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected key=value");
        set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

bool RunConfig::parse(const std::vector<std::string>& args) {
    for (const auto& a : args)
        if (a == "--help" || a == "-h") return true;
    // config files first so flags override them regardless of position
    for (const auto& a : args) {
        if (a.rfind("--config=", 0) == 0) load_file(a.substr(9));
    }
    for (const auto& a : args) {
        if (a.rfind("--config=", 0) == 0) continue;
        if (a.rfind("--", 0) != 0)
            throw std::runtime_error("expected --key=value, got '" + a + "'");
        std::size_t eq = a.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("flag '" + a + "' needs =value");
        set(a.substr(2, eq - 2), a.substr(eq + 1));
    }
    return false;
}

const std::string& RunConfig::str(const std::string& key) const {
    return get(key).value;
}

double RunConfig::num(const std::string& key) const {
    const std::string& v = get(key).value;
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "': '" + v + "' is not a number");
    }
}

std::uint64_t RunConfig::u64(const std::string& key) const {
    const std::string& v = get(key).value;
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        unsigned long long n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return n;
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "': '" + v +
                                 "' is not a non-negative integer");
    }
}

long RunConfig::i64(const std::string& key) const {
    const std::string& v = get(key).value;
    try {
        std::size_t used = 0;
        long n = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return n;
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "': '" + v +
                                 "' is not an integer");
    }
}

std::vector<double> RunConfig::num_list(const std::string& key) const {
    const std::string& v = get(key).value;
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty())
            throw std::runtime_error("config key '" + key + "': empty list element");
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw std::runtime_error("config key '" + key + "': '" + item +
                                     "' is not a number");
        }
    }
    if (out.empty())
        throw std::runtime_error("config key '" + key + "': list is empty");
    return out;
}

std::string RunConfig::help_text() const {
    std::size_t width = 0;
    for (const auto& [k, e] : entries_) width = std::max(width, k.size() + e.def.size());
    std::string out;
    for (const auto& [k, e] : entries_) {
        std::string lhs = "  --" + k + "=" + e.def;
        out += lhs;
        std::size_t pad = width + 8;
        out += std::string(lhs.size() < pad ? pad - lhs.size() : 2, ' ');
        out += e.help + "\n";
    }
    return out;
}

std::string RunConfig::echo() const {
    std::string out;
    for (const auto& [k, e] : entries_) out += k + "=" + e.value + "\n";
    return out;
}
