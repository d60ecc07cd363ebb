#pragma once

#include <map>
#include <string>

#include "dgpe/errors.hpp"

namespace dgpe {

/// Flat sectioned key/value configuration ([section] headers, key = value
/// lines, # comments). Values are kept as strings and converted on access.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;

  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const;
  double get_num(const std::string& section, const std::string& key,
                 double fallback) const;
  long get_int(const std::string& section, const std::string& key,
               long fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;

  void set(const std::string& section, const std::string& key,
           const std::string& value);
  void set_num(const std::string& section, const std::string& key, double v);
  void set_int(const std::string& section, const std::string& key, long v);
  void set_bool(const std::string& section, const std::string& key, bool v);

  /// Serializes sections and keys in sorted order.
  std::string dump() const;

 private:
  const std::string* find(const std::string& section,
                          const std::string& key) const;
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace dgpe
