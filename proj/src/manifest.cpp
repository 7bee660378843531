#include "cupid/manifest.hpp"

#include <cstdlib>
#include <ctime>
#include <sstream>

#include "cupid/util.hpp"
#include "json.hpp"

namespace cupid {

namespace {

void check_key(const std::string& key, const FlatConfig& allowed, const std::string& path) {
    if (!allowed.count(key))
        throw config_error("unknown config key '" + key + "' in " + path);
}

std::string json_scalar_to_string(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
    if (v.is_number()) return format_real(v.get<double>());
    throw config_error("config values must be scalars, got: " + v.dump());
}

}  // namespace

FlatConfig load_config_file(const std::string& path, const FlatConfig& allowed) {
    const std::string text = read_file_text(path);
    FlatConfig out;
    const std::string trimmed = trim(text);
    if (!trimmed.empty() && trimmed[0] == '{') {
        const auto j = nlohmann::json::parse(text);
        if (!j.is_object()) throw config_error("config JSON must be an object: " + path);
        for (auto it = j.begin(); it != j.end(); ++it) {
            check_key(it.key(), allowed, path);
            out[it.key()] = json_scalar_to_string(it.value());
        }
        return out;
    }
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(line_no) + " in " + path +
                               " is not 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        check_key(key, allowed, path);
        out[key] = trim(t.substr(eq + 1));
    }
    return out;
}

namespace {

const std::string& fetch(const FlatConfig& c, const std::string& key) {
    auto it = c.find(key);
    if (it == c.end()) throw config_error("missing config key '" + key + "'");
    return it->second;
}

}  // namespace

int64_t cfg_int(const FlatConfig& c, const std::string& key) {
    const std::string& s = fetch(c, key);
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw config_error("config key '" + key + "' expects an integer, got '" + s + "'");
    return v;
}

double cfg_double(const FlatConfig& c, const std::string& key) {
    const std::string& s = fetch(c, key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw config_error("config key '" + key + "' expects a number, got '" + s + "'");
    return v;
}

bool cfg_bool(const FlatConfig& c, const std::string& key) {
    const std::string& s = fetch(c, key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw config_error("config key '" + key + "' expects a boolean, got '" + s + "'");
}

uint64_t cfg_u64(const FlatConfig& c, const std::string& key) {
    const std::string& s = fetch(c, key);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw config_error("config key '" + key + "' expects an unsigned integer, got '" + s + "'");
    return v;
}

std::string cfg_str(const FlatConfig& c, const std::string& key) { return fetch(c, key); }

std::vector<double> cfg_list(const FlatConfig& c, const std::string& key) {
    std::vector<double> out;
    for (const std::string& part : split(fetch(c, key), ',')) {
        const std::string t = trim(part);
        if (t.empty()) continue;
        if (t == "inf") {
            out.push_back(std::numeric_limits<double>::infinity());
            continue;
        }
        char* end = nullptr;
        const double v = std::strtod(t.c_str(), &end);
        if (end == t.c_str() || *end != '\0')
            throw config_error("config key '" + key + "': bad list entry '" + t + "'");
        out.push_back(v);
    }
    if (out.empty()) throw config_error("config key '" + key + "' is an empty list");
    return out;
}

std::vector<std::string> cfg_str_list(const FlatConfig& c, const std::string& key) {
    std::vector<std::string> out;
    for (const std::string& part : split(fetch(c, key), ','))
        if (!trim(part).empty()) out.push_back(trim(part));
    if (out.empty()) throw config_error("config key '" + key + "' is an empty list");
    return out;
}

std::string utc_now_string() {
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void RunManifest::write(const std::string& path) const {
    nlohmann::json j;
    j["format"] = 1;
    j["subcommand"] = subcommand;
    j["config"] = config;
    j["inputs"] = input_hashes;
    j["created_utc"] = created_utc;
    write_file_text(path, j.dump(2) + "\n");
}

RunManifest RunManifest::read(const std::string& path) {
    const auto j = nlohmann::json::parse(read_file_text(path));
    RunManifest m;
    m.subcommand = j.at("subcommand").get<std::string>();
    for (auto it = j.at("config").begin(); it != j.at("config").end(); ++it)
        m.config[it.key()] = it.value().get<std::string>();
    for (auto it = j.at("inputs").begin(); it != j.at("inputs").end(); ++it)
        m.input_hashes[it.key()] = it.value().get<std::string>();
    m.created_utc = j.value("created_utc", "");
    return m;
}

}  // namespace cupid
