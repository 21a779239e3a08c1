#pragma once

#include <set>
#include <string>

#include "json.hpp"
#include "stylealign/errors.hpp"

namespace stylealign {

/// Reads fields out of a JSON object and rejects keys nobody asked for.
class StrictReader {
 public:
  StrictReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(child(key) + ": " + e.what());
    }
  }

  /// Calls `fn(StrictReader&)` on a nested object, if present.
  template <typename Fn>
  void nested(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    StrictReader sub(j_.at(key), child(key));
    fn(sub);
    sub.finish();
  }

  const nlohmann::json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown configuration key '" + child(k) + "'");
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "configuration" : "'" + path_ + "'"; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace stylealign
