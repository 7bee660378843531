#pragma once

// Flat key=value configuration with JSON support, and the run manifest every
// subcommand writes before computing anything. Re-running a manifest
// reproduces the run's outputs.

#include <map>
#include <string>
#include <vector>

#include "cupid/common.hpp"

namespace cupid {

using FlatConfig = std::map<std::string, std::string>;

// Accepts either a JSON object of scalars or "key = value" lines with
// '#' comments. Keys must come from `allowed`; anything else is a config error
// naming the offending key.
FlatConfig load_config_file(const std::string& path, const FlatConfig& allowed);

// typed accessors over resolved string maps
int64_t cfg_int(const FlatConfig& c, const std::string& key);
double cfg_double(const FlatConfig& c, const std::string& key);
bool cfg_bool(const FlatConfig& c, const std::string& key);
uint64_t cfg_u64(const FlatConfig& c, const std::string& key);
std::string cfg_str(const FlatConfig& c, const std::string& key);
std::vector<double> cfg_list(const FlatConfig& c, const std::string& key);
std::vector<std::string> cfg_str_list(const FlatConfig& c, const std::string& key);

struct RunManifest {
    std::string subcommand;
    FlatConfig config;                    // fully resolved, defaults included
    std::map<std::string, std::string> input_hashes;  // path -> sha256
    std::string created_utc;

    void write(const std::string& path) const;
    static RunManifest read(const std::string& path);
};

std::string utc_now_string();

}  // namespace cupid
