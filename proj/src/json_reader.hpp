#pragma once

#include <set>
#include <string>

#include "json.hpp"
#include "msseg/error.hpp"

namespace msseg::detail {

// Reads one JSON object, rejecting keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw Error(ErrorCode::InvalidConfig, context_ + " expected a JSON object");
  }

  template <typename T>
  bool get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return false;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, where(key) + ": " + e.what());
    }
    return true;
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    if (!get(key, out)) throw Error(ErrorCode::InvalidConfig, where(key) + ": missing");
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  // "file: section.key" when the context ends in ':'.
  std::string where(const std::string& key) const {
    return !context_.empty() && context_.back() == ':' ? context_ + " " + key : context_ + "." + key;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw Error(ErrorCode::InvalidConfig, where(item.key()) + ": unknown key");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace msseg::detail
