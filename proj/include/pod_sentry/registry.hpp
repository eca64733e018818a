#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pod_sentry/error.hpp"
#include "pod_sentry/geometry.hpp"

namespace pod_sentry {

struct ClassEntry {
  ClassId id = 0;
  std::string name;
  std::vector<std::string> aliases;

  friend bool operator==(const ClassEntry&, const ClassEntry&) = default;
};

// Lowercase, with spaces and hyphens folded to '_', so "Black Pod",
// "black-pod" and "black_pod" compare equal.
inline std::string fold_class_name(std::string_view name) {
  std::string out;
  out.reserve(name.size());
  std::size_t b = 0;
  std::size_t e = name.size();
  while (b < e && std::isspace(static_cast<unsigned char>(name[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(name[e - 1]))) --e;
  for (std::size_t i = b; i < e; ++i) {
    const auto ch = static_cast<unsigned char>(name[i]);
    if (ch == ' ' || ch == '-') {
      out.push_back('_');
    } else {
      out.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  return out;
}

// Ordered class list with dense ids from 0 and case-insensitive unique names.
class ClassRegistry {
 public:
  ClassRegistry() = default;

  explicit ClassRegistry(std::vector<ClassEntry> entries)
      : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].id != static_cast<ClassId>(i)) {
        throw ValidationError("class ids must be dense from 0; entry " +
                              std::to_string(i) + " has id " +
                              std::to_string(entries_[i].id));
      }
      if (fold_class_name(entries_[i].name).empty()) {
        throw ValidationError("class " + std::to_string(i) + " has no name");
      }
    }
    std::vector<std::string> seen;
    for (const auto& e : entries_) {
      std::vector<std::string> keys{fold_class_name(e.name)};
      for (const auto& a : e.aliases) keys.push_back(fold_class_name(a));
      std::sort(keys.begin(), keys.end());
      keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
      for (auto& k : keys) {
        if (std::find(seen.begin(), seen.end(), k) != seen.end()) {
          throw ValidationError("class name or alias '" + k +
                                "' is not unique");
        }
        seen.push_back(std::move(k));
      }
    }
  }

  // 0 = black_pod, 1 = monilia, 2 = healthy.
  static ClassRegistry cocoa_default() {
    return ClassRegistry({
        {0, "black_pod", {"black pod", "blackpod", "fitoftora", "phytophthora"}},
        {1, "monilia", {"moniliasis", "moniliophthora"}},
        {2, "healthy", {"healthy pod", "sana"}},
    });
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<ClassEntry>& entries() const { return entries_; }

  bool contains(ClassId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < entries_.size();
  }

  const ClassEntry& at(ClassId id) const {
    if (!contains(id)) {
      throw UnknownClassError("unknown class id " + std::to_string(id));
    }
    return entries_[static_cast<std::size_t>(id)];
  }

  const std::string& name(ClassId id) const { return at(id).name; }

  std::optional<ClassId> find(std::string_view name) const {
    const std::string key = fold_class_name(name);
    for (const auto& e : entries_) {
      if (fold_class_name(e.name) == key) return e.id;
      for (const auto& a : e.aliases) {
        if (fold_class_name(a) == key) return e.id;
      }
    }
    return std::nullopt;
  }

  ClassId resolve(std::string_view name) const {
    if (auto id = find(name)) return *id;
    throw UnknownClassError("unknown class name '" + std::string(name) + "'");
  }

  friend bool operator==(const ClassRegistry&, const ClassRegistry&) = default;

 private:
  std::vector<ClassEntry> entries_;
};

}  // namespace pod_sentry
