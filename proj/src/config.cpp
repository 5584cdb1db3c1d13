#include "pxst/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace pxst::config {

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::optional<double> to_number(const std::string &s) {
    if (s.empty()) return std::nullopt;
    std::size_t used = 0;
    try {
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception &) {
    }
    return std::nullopt;
}

bool looks_numeric(const std::string &s) {
    return !s.empty() && (std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '-' ||
                          s[0] == '+' || s[0] == '.');
}

std::vector<std::string> split_list(const std::string &s) {
    std::vector<std::string> parts;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) parts.push_back(trim(item));
    return parts;
}

const ParamSpec *lookup(const Schema *schema, const std::string &section, const std::string &key) {
    if (!schema) return nullptr;
    auto it = schema->find(section);
    if (it == schema->end()) return nullptr;
    for (const auto &p : it->second)
        if (p.name == key) return &p;
    return nullptr;
}

}  // namespace

Value parse_value(const std::string &key, const std::string &raw, std::optional<ParamType> type) {
    std::string text = trim(raw);
    if (text.size() >= 2 && (text.front() == '"' || text.front() == '\'') && text.back() == text.front())
        return text.substr(1, text.size() - 2);

    auto fail = [&](const char *what) {
        return ParseError("parameter '" + key + "': cannot parse '" + text + "' as " + what);
    };

    if (type) {
        switch (*type) {
        case ParamType::Bool: {
            const std::string l = lower(text);
            if (l == "true" || l == "1") return true;
            if (l == "false" || l == "0") return false;
            throw fail("a boolean");
        }
        case ParamType::Number:
            if (auto v = to_number(text)) return *v;
            throw fail("a number");
        case ParamType::NumberList: {
            std::vector<double> out;
            for (const auto &p : split_list(text)) {
                auto v = to_number(p);
                if (!v) throw fail("a comma-separated list of numbers");
                out.push_back(*v);
            }
            return out;
        }
        case ParamType::String:
            return text;
        }
    }

    const std::string l = lower(text);
    if (l == "true") return true;
    if (l == "false") return false;
    if (text.find(',') != std::string::npos) {
        std::vector<double> out;
        bool all = true;
        for (const auto &p : split_list(text)) {
            auto v = to_number(p);
            if (!v) {
                all = false;
                break;
            }
            out.push_back(*v);
        }
        if (all) return out;
        return text;
    }
    if (auto v = to_number(text)) return *v;
    if (looks_numeric(text)) throw fail("a number");
    return text;
}

std::string to_string(const Value &v) {
    std::ostringstream o;
    o.precision(17);
    std::visit(
        [&](const auto &x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, bool>)
                o << (x ? "True" : "False");
            else if constexpr (std::is_same_v<T, double>)
                o << x;
            else if constexpr (std::is_same_v<T, std::string>)
                o << x;
            else
                for (std::size_t k = 0; k < x.size(); ++k) o << (k ? "," : "") << x[k];
        },
        v);
    return o.str();
}

bool RunConfig::has(const std::string &section, const std::string &key) const {
    return find(section, key) != nullptr;
}

const Value *RunConfig::find(const std::string &section, const std::string &key) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
}

void RunConfig::set(const std::string &section, const std::string &key, Value v) {
    sections_[section][key] = std::move(v);
}

double RunConfig::number(const std::string &section, const std::string &key, double fallback) const {
    const Value *v = find(section, key);
    if (!v) return fallback;
    if (auto d = std::get_if<double>(v)) return *d;
    if (auto b = std::get_if<bool>(v)) return *b ? 1.0 : 0.0;
    throw ParseError("parameter '" + key + "' in [" + section + "] must be a number");
}

bool RunConfig::boolean(const std::string &section, const std::string &key, bool fallback) const {
    const Value *v = find(section, key);
    if (!v) return fallback;
    if (auto b = std::get_if<bool>(v)) return *b;
    if (auto d = std::get_if<double>(v); d && (*d == 0 || *d == 1)) return *d != 0;
    throw ParseError("parameter '" + key + "' in [" + section + "] must be True or False");
}

std::string RunConfig::string(const std::string &section, const std::string &key,
                              const std::string &fallback) const {
    const Value *v = find(section, key);
    if (!v) return fallback;
    return to_string(*v);
}

std::vector<double> RunConfig::numbers(const std::string &section, const std::string &key,
                                       const std::vector<double> &fallback) const {
    const Value *v = find(section, key);
    if (!v) return fallback;
    if (auto l = std::get_if<std::vector<double>>(v)) return *l;
    if (auto d = std::get_if<double>(v)) return {*d};
    throw ParseError("parameter '" + key + "' in [" + section + "] must be a list of numbers");
}

std::vector<std::string> RunConfig::unknown_keys(const Schema &schema) const {
    std::vector<std::string> out;
    for (const auto &[section, entries] : sections_)
        for (const auto &[key, value] : entries)
            if (!lookup(&schema, section, key)) out.push_back(section + "." + key);
    return out;
}

RunConfig parse_config(const std::string &text, const Schema *schema) {
    RunConfig cfg;
    std::map<std::string, std::vector<std::string>> seen;
    std::string section;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ParseError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        std::string value = line.substr(eq + 1);
        if (const auto hash = value.find(" #"); hash != std::string::npos) value.resize(hash);
        if (key.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty key");
        auto &keys = seen[section];
        if (std::find(keys.begin(), keys.end(), key) != keys.end())
            throw ParseError("duplicate key '" + key + "' in section [" + section + "]");
        keys.push_back(key);

        std::optional<ParamType> type;
        if (const ParamSpec *spec = lookup(schema, section, key)) type = spec->type;
        cfg.set(section, key, parse_value(key, value, type));
    }
    return cfg;
}

RunConfig load_config(const std::string &path, const Schema *schema) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot read configuration file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), schema);
}

}  // namespace pxst::config
