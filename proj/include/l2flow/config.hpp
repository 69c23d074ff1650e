#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace l2flow::config {

struct KeyInfo {
    std::string key;
    std::string default_value;
    std::string help;
};

/// Every accepted key with its default.
const std::vector<KeyInfo>& schema();

/// key=value run configuration. Blank lines and lines starting with '#' are
/// ignored; unknown keys are rejected with their line number.
class RunConfig {
public:
    RunConfig();

    static RunConfig parse(std::istream& in, const std::string& source = "<config>");
    static RunConfig load(const std::filesystem::path& path);

    /// Overrides a key; throws ValidationError for unknown keys.
    void set(const std::string& key, const std::string& value);
    bool is_set(const std::string& key) const;  // explicitly given, not defaulted

    std::string str(const std::string& key) const;
    double num(const std::string& key) const;
    long integer(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<double> nums(const std::string& key) const;
    std::vector<std::string> strs(const std::string& key) const;
    std::optional<double> opt_num(const std::string& key) const;

    /// Checks that configured input paths exist.
    void check_paths() const;

    /// Every key (defaults included), sorted; parse(snapshot()) reproduces this config.
    std::string snapshot() const;

private:
    const std::string& raw(const std::string& key) const;

    std::map<std::string, std::string> values_;
    std::map<std::string, bool> explicit_;
};

} // namespace l2flow::config
