#include "dgpe/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dgpe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ParseError("config: bad section header at line " +
                         std::to_string(lineno));
      }
      section = trim(line.substr(1, line.size() - 2));
      cfg.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config: expected key = value at line " +
                       std::to_string(lineno));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = unquote(trim(line.substr(eq + 1)));
    if (key.empty()) {
      throw ParseError("config: empty key at line " + std::to_string(lineno));
    }
    cfg.sections_[section][key] = value;
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string* Config::find(const std::string& section,
                                const std::string& key) const {
  const auto sit = sections_.find(section);
  if (sit == sections_.end()) return nullptr;
  const auto kit = sit->second.find(key);
  return kit == sit->second.end() ? nullptr : &kit->second;
}

bool Config::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string Config::get_str(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  const std::string* v = find(section, key);
  return v ? *v : fallback;
}

double Config::get_num(const std::string& section, const std::string& key,
                       double fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  char* end = nullptr;
  const double x = std::strtod(v->c_str(), &end);
  if (end != v->c_str() + v->size()) {
    throw ParseError("config: " + section + "." + key + " is not a number");
  }
  return x;
}

long Config::get_int(const std::string& section, const std::string& key,
                     long fallback) const {
  const double x = get_num(section, key, static_cast<double>(fallback));
  const long r = static_cast<long>(x);
  if (static_cast<double>(r) != x) {
    throw ParseError("config: " + section + "." + key + " is not an integer");
  }
  return r;
}

bool Config::get_bool(const std::string& section, const std::string& key,
                      bool fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ParseError("config: " + section + "." + key + " is not a boolean");
}

void Config::set(const std::string& section, const std::string& key,
                 const std::string& value) {
  sections_[section][key] = value;
}

void Config::set_num(const std::string& section, const std::string& key,
                     double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  set(section, key, os.str());
}

void Config::set_int(const std::string& section, const std::string& key,
                     long v) {
  set(section, key, std::to_string(v));
}

void Config::set_bool(const std::string& section, const std::string& key,
                      bool v) {
  set(section, key, v ? "true" : "false");
}

std::string Config::dump() const {
  std::ostringstream os;
  for (const auto& [section, kv] : sections_) {
    os << '[' << section << "]\n";
    for (const auto& [key, value] : kv) {
      const bool numeric = !value.empty() &&
                           value.find_first_not_of(
                               "0123456789+-.eE") == std::string::npos;
      const bool boolean = value == "true" || value == "false";
      if (numeric || boolean) {
        os << key << " = " << value << '\n';
      } else {
        os << key << " = \"" << value << "\"\n";
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace dgpe
