#include "maga/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "maga/error.hpp"

namespace maga {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.')) return false;
  return true;
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return from_text(buf.str());
}

KvConfig KvConfig::from_text(const std::string& text) {
  KvConfig cfg;
  std::istringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + " has no '=': " + line);
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) throw std::invalid_argument("bad config key: '" + key + "'");
  values_[key] = value;
}

void KvConfig::set_pair(const std::string& pair) {
  std::size_t eq = pair.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like key=value: " + pair);
  set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
}

bool KvConfig::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string& KvConfig::get_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("missing config key: " + key);
  return it->second;
}

std::string KvConfig::get_str_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::uint64_t KvConfig::get_u64(const std::string& key) const {
  const std::string& v = get_str(key);
  try {
    std::size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + " is not an unsigned integer: '" + v + "'");
  }
}

double KvConfig::get_f64(const std::string& key) const {
  const std::string& v = get_str(key);
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + " is not a number: '" + v + "'");
  }
}

bool KvConfig::get_bool(const std::string& key) const {
  const std::string& v = get_str(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument("config key " + key + " must be true or false, got '" + v + "'");
}

void KvConfig::restrict_keys(const std::set<std::string>& allowed) const {
  std::string bad;
  for (const auto& [k, v] : values_)
    if (!allowed.count(k)) bad += (bad.empty() ? "" : ", ") + k;
  if (!bad.empty()) throw std::invalid_argument("unknown config keys: " + bad);
}

std::string KvConfig::snapshot() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

}  // namespace maga
