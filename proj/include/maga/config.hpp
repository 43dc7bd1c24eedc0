#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace maga {

// Flat key=value configuration. One "key=value" per line, full-line or
// trailing # comments, keys limited to [a-z0-9_.]. Later assignments win.
class KvConfig {
 public:
  static KvConfig from_file(const std::string& path);
  static KvConfig from_text(const std::string& text);

  void set(const std::string& key, const std::string& value);
  // "key=value" as typed on a command line.
  void set_pair(const std::string& pair);

  bool has(const std::string& key) const;
  const std::string& get_str(const std::string& key) const;
  std::string get_str_or(const std::string& key, const std::string& fallback) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_f64(const std::string& key) const;
  bool get_bool(const std::string& key) const;  // true/false only

  // Rejects any key outside `allowed` (sorted in the message).
  void restrict_keys(const std::set<std::string>& allowed) const;

  // Sorted key=value lines; reparsing reproduces this config exactly.
  std::string snapshot() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace maga
