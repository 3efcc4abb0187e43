#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fff/errors.hpp"

namespace fff {

// One option of a CLI command: a key (used as "--key" on the command line and
// as "key = value" in config files), a default value, and help text. Flags
// take no value on the command line; their value is "true"/"false".
struct OptionDecl {
  std::string key;
  std::string value;  // default
  bool flag = false;
  bool out_path = false;  // output file path: subject to --redirect-out on rerun
  std::string help;
};

// Layered option resolution: declaration defaults, then an optional config
// file, then command-line flags. Unknown keys are hard errors at every layer.
class OptionSet {
 public:
  explicit OptionSet(std::vector<OptionDecl> decls) : decls_(std::move(decls)) {
    for (const auto& d : decls_) values_[d.key] = d.value;
  }

  const std::vector<OptionDecl>& decls() const { return decls_; }

  bool known(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown option '" + key + "'");
    it->second = value;
    explicit_.insert(key);
  }

  // Config file: one `key = value` per line, blank lines and '#' comments
  // allowed. Values keep inner whitespace; surrounding whitespace is trimmed.
  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path.string() + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                          ": expected 'key = value', got '" + trimmed + "'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty key");
      set(key, value);
    }
  }

  // Command-line layer: "--key value", "--key=value", or bare "--flag".
  // A "--config FILE" pair is loaded immediately, so later flags override the
  // file no matter where --config sits.
  void parse_args(const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
      const std::string& arg = args[i];
      if (arg.rfind("--", 0) != 0)
        throw ConfigError("expected an option, got '" + arg + "'");
      std::string key = arg.substr(2);
      std::string value;
      bool has_value = false;
      const auto eq = key.find('=');
      if (eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
        has_value = true;
      }
      if (key == "config") {
        if (!has_value) {
          if (++i == args.size()) throw ConfigError("--config requires a file path");
          value = args[i];
        }
        load_file(value);
        continue;
      }
      if (!known(key)) throw ConfigError("unknown option '--" + key + "'");
      if (is_flag(key)) {
        if (has_value)
          throw ConfigError("option '--" + key + "' is a switch and takes no value");
        set(key, "true");
        continue;
      }
      if (!has_value) {
        if (++i == args.size()) throw ConfigError("option '--" + key + "' requires a value");
        value = args[i];
      }
      set(key, value);
    }
  }

  bool was_set(const std::string& key) const { return explicit_.count(key) != 0; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown option '" + key + "'");
    return it->second;
  }

  std::int64_t i64(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t pos = 0;
      const std::int64_t out = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("option '" + key + "': expected an integer, got '" + v + "'");
    }
  }

  double dbl(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t pos = 0;
      const double out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("option '" + key + "': expected a number, got '" + v + "'");
    }
  }

  std::uint64_t u64(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t pos = 0;
      const std::uint64_t out = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("option '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
  }

  bool boolean(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("option '" + key + "': expected true/false, got '" + v + "'");
  }

  // Comma-separated integer list; empty string means empty list.
  std::vector<int> int_list(const std::string& key) const {
    const std::string& v = str(key);
    std::vector<int> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t pos = 0;
        out.push_back(std::stoi(trim(tok), &pos));
        if (pos != trim(tok).size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError("option '" + key + "': expected comma-separated integers, got '" + v +
                          "'");
      }
    }
    return out;
  }

  // Comma-separated doubles; empty string means empty list.
  std::vector<double> dbl_list(const std::string& key) const {
    const std::string& v = str(key);
    std::vector<double> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t pos = 0;
        out.push_back(std::stod(trim(tok), &pos));
        if (pos != trim(tok).size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError("option '" + key + "': expected comma-separated numbers, got '" + v +
                          "'");
      }
    }
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
  }

 private:
  bool is_flag(const std::string& key) const {
    for (const auto& d : decls_)
      if (d.key == key) return d.flag;
    return false;
  }

  std::vector<OptionDecl> decls_;
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace fff
