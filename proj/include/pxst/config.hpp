#ifndef PXST_CONFIG_HPP
#define PXST_CONFIG_HPP

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace pxst::config {

using Value = std::variant<bool, double, std::string, std::vector<double>>;

enum class ParamType { Bool, Number, String, NumberList };

struct ParamSpec {
    std::string name;
    ParamType type;
    std::string default_value;  // as it would appear in the file
    std::string description;
};

// Accepted parameters per section (section name = command name).
using Schema = std::map<std::string, std::vector<ParamSpec>>;

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// INI-style configuration: `[section]` headers followed by `key = value`
// lines. Keys before the first header belong to the "" section.
class RunConfig {
public:
    using Section = std::map<std::string, Value>;

    bool has(const std::string &section, const std::string &key) const;
    const Value *find(const std::string &section, const std::string &key) const;
    void set(const std::string &section, const std::string &key, Value v);

    // Typed access with a fallback. Throw ParseError naming the key when the
    // stored value has the wrong type.
    double number(const std::string &section, const std::string &key, double fallback) const;
    bool boolean(const std::string &section, const std::string &key, bool fallback) const;
    std::string string(const std::string &section, const std::string &key,
                       const std::string &fallback) const;
    std::vector<double> numbers(const std::string &section, const std::string &key,
                                const std::vector<double> &fallback) const;

    const std::map<std::string, Section> &sections() const { return sections_; }
    // Keys present in the file but not declared by the schema, as "section.key".
    std::vector<std::string> unknown_keys(const Schema &schema) const;

private:
    std::map<std::string, Section> sections_;
};

// Parses configuration text. Booleans accept True/False (any case); lists are
// comma separated numbers. With a schema, values are checked against the
// declared parameter types. Throws ParseError on duplicate keys, malformed
// lines, or values that do not parse as their declared type.
RunConfig parse_config(const std::string &text, const Schema *schema = nullptr);

RunConfig load_config(const std::string &path, const Schema *schema = nullptr);

// Converts a single textual value to the given type (used by parse_config and
// by callers that receive parameters from other sources).
Value parse_value(const std::string &key, const std::string &text, std::optional<ParamType> type);

std::string to_string(const Value &v);

}  // namespace pxst::config

#endif
