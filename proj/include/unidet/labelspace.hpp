#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "unidet/error.hpp"

namespace unidet {

/// Lowercase, trim, and collapse inner whitespace runs to one space.
/// "TV  Monitor " -> "tv monitor". Anything beyond that is an alias decision.
inline std::string normalize_name(const std::string& name) {
  std::string out;
  out.reserve(name.size());
  bool pending_space = false;
  for (unsigned char ch : name) {
    if (std::isspace(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

inline constexpr const char* kBackgroundName = "background";

struct Category {
  int id = 0;
  std::string name;

  friend bool operator==(const Category&, const Category&) = default;
};

/// Categories annotated in one dataset. Everything else in its images is
/// implicitly that dataset's background.
struct DatasetLabelSpace {
  std::string dataset_id;
  std::vector<Category> categories;

  const Category* find_id(int local_id) const {
    for (const auto& c : categories)
      if (c.id == local_id) return &c;
    return nullptr;
  }

  const Category* find_name(const std::string& name) const {
    const auto key = normalize_name(name);
    for (const auto& c : categories)
      if (normalize_name(c.name) == key) return &c;
    return nullptr;
  }

  void validate() const {
    require(!dataset_id.empty(), ErrorKind::validation, "label space has an empty dataset_id");
    std::set<int> ids;
    std::set<std::string> names;
    for (const auto& c : categories) {
      const auto norm = normalize_name(c.name);
      if (norm.empty())
        fail(ErrorKind::validation, "dataset '" + dataset_id + "': category " + std::to_string(c.id) + " has an empty name");
      if (norm == kBackgroundName)
        fail(ErrorKind::validation, "dataset '" + dataset_id + "': 'background' is reserved and cannot be annotated");
      if (!ids.insert(c.id).second)
        fail(ErrorKind::validation, "dataset '" + dataset_id + "': duplicate category id " + std::to_string(c.id));
      if (!names.insert(norm).second)
        fail(ErrorKind::validation, "dataset '" + dataset_id + "': duplicate category name '" + norm + "'");
    }
  }
};

struct AliasMember {
  std::string dataset_id;
  std::string category_name;
};

struct AliasGroup {
  std::string unified_name;
  std::vector<AliasMember> members;
};

/// Explicit cross-dataset category merges ("tvmonitor" in A == "tv" in B).
struct AliasMap {
  std::vector<AliasGroup> groups;

  void validate() const {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& g : groups) {
      if (normalize_name(g.unified_name).empty())
        fail(ErrorKind::configuration, "alias group with an empty unified_name");
      if (normalize_name(g.unified_name) == kBackgroundName)
        fail(ErrorKind::configuration, "alias group cannot be named 'background'");
      for (const auto& m : g.members) {
        if (!seen.emplace(m.dataset_id, normalize_name(m.category_name)).second)
          fail(ErrorKind::configuration,
               "alias member (" + m.dataset_id + ", " + m.category_name + ") appears in more than one group");
      }
    }
  }
};

/// L_u plus the unified background at index |L_u|.
class UnifiedLabelSpace {
 public:
  UnifiedLabelSpace() = default;

  /// Assembles a space from already-resolved parts (used by the file loader);
  /// build_unified() is the usual way in.
  UnifiedLabelSpace(std::vector<std::string> names, std::map<std::string, std::map<int, int>> per_dataset,
                    std::map<std::string, std::vector<Category>> local_categories)
      : names_(std::move(names)), per_dataset_(std::move(per_dataset)), local_(std::move(local_categories)) {
    check_invariants();
  }

  /// Number of real (non-background) unified categories.
  int size() const { return static_cast<int>(names_.size()); }
  int background_id() const { return size(); }
  /// Length of a probability / logit vector: |L_u| + 1.
  int num_classes() const { return size() + 1; }

  const std::vector<std::string>& names() const { return names_; }

  const std::string& name(int unified_id) const {
    if (unified_id == background_id()) return background_name_;
    require(unified_id >= 0 && unified_id < size(), ErrorKind::lookup,
            "unified id " + std::to_string(unified_id) + " out of range");
    return names_[static_cast<std::size_t>(unified_id)];
  }

  std::vector<Category> categories() const {
    std::vector<Category> out;
    out.reserve(names_.size());
    for (int i = 0; i < size(); ++i) out.push_back({i, names_[static_cast<std::size_t>(i)]});
    return out;
  }

  /// Unified id for a normalized unified name, or -1.
  int find(const std::string& name) const {
    const auto key = normalize_name(name);
    auto it = std::lower_bound(names_.begin(), names_.end(), key);
    if (it == names_.end() || *it != key) return -1;
    return static_cast<int>(it - names_.begin());
  }

  bool has_dataset(const std::string& dataset_id) const { return per_dataset_.count(dataset_id) != 0; }

  std::vector<std::string> dataset_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, _] : per_dataset_) ids.push_back(id);
    return ids;
  }

  const std::map<int, int>& mapping(const std::string& dataset_id) const {
    auto it = per_dataset_.find(dataset_id);
    if (it == per_dataset_.end()) fail(ErrorKind::lookup, "unknown dataset '" + dataset_id + "'");
    return it->second;
  }

  const std::vector<Category>& local_categories(const std::string& dataset_id) const {
    auto it = local_.find(dataset_id);
    if (it == local_.end()) fail(ErrorKind::lookup, "unknown dataset '" + dataset_id + "'");
    return it->second;
  }

  int to_unified(const std::string& dataset_id, int local_id) const {
    const auto& m = mapping(dataset_id);
    auto it = m.find(local_id);
    if (it == m.end())
      fail(ErrorKind::lookup,
           "dataset '" + dataset_id + "' has no category with local id " + std::to_string(local_id));
    return it->second;
  }

  /// Unified ids of the categories annotated in `dataset_id`, ascending.
  std::vector<int> mapped(const std::string& dataset_id) const {
    std::vector<int> ids;
    for (const auto& [_, u] : mapping(dataset_id)) ids.push_back(u);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  friend bool operator==(const UnifiedLabelSpace& a, const UnifiedLabelSpace& b) {
    return a.names_ == b.names_ && a.per_dataset_ == b.per_dataset_ && a.local_ == b.local_;
  }

 private:
  void check_invariants() const {
    require(std::is_sorted(names_.begin(), names_.end()) &&
                std::adjacent_find(names_.begin(), names_.end()) == names_.end(),
            ErrorKind::validation, "unified category names must be unique and sorted");
    for (const auto& [ds, m] : per_dataset_) {
      std::set<int> targets;
      for (const auto& [local, u] : m) {
        require(u >= 0 && u < size(), ErrorKind::validation,
                "dataset '" + ds + "' maps local id " + std::to_string(local) + " outside the unified range");
        require(targets.insert(u).second, ErrorKind::validation,
                "dataset '" + ds + "' maps two categories onto unified id " + std::to_string(u));
      }
    }
  }

  std::vector<std::string> names_;
  std::map<std::string, std::map<int, int>> per_dataset_;
  std::map<std::string, std::vector<Category>> local_;
  std::string background_name_ = kBackgroundName;
};

/// Union of the label spaces. Categories merge when their normalized names
/// are equal or when an alias group lists them together; unified ids follow
/// lexicographic name order and the background takes the last slot.
inline UnifiedLabelSpace build_unified(const std::vector<DatasetLabelSpace>& spaces, const AliasMap& aliases) {
  std::map<std::string, const DatasetLabelSpace*> by_id;
  for (const auto& s : spaces) {
    s.validate();
    if (!by_id.emplace(s.dataset_id, &s).second)
      fail(ErrorKind::validation, "duplicate dataset_id '" + s.dataset_id + "'");
  }
  aliases.validate();

  // (dataset, normalized local name) -> unified name
  std::map<std::pair<std::string, std::string>, std::string> alias_of;
  for (const auto& g : aliases.groups) {
    for (const auto& m : g.members) {
      auto it = by_id.find(m.dataset_id);
      if (it == by_id.end() || it->second->find_name(m.category_name) == nullptr)
        fail(ErrorKind::configuration,
             "alias member (" + m.dataset_id + ", " + m.category_name + ") does not resolve to a dataset category");
      alias_of[{m.dataset_id, normalize_name(m.category_name)}] = normalize_name(g.unified_name);
    }
  }

  std::map<std::string, std::map<int, std::string>> target_name;
  std::set<std::string> all_names;
  for (const auto& [ds, space] : by_id) {
    for (const auto& c : space->categories) {
      const auto norm = normalize_name(c.name);
      auto it = alias_of.find({ds, norm});
      const std::string& unified = it == alias_of.end() ? norm : it->second;
      target_name[ds][c.id] = unified;
      all_names.insert(unified);
    }
  }

  std::vector<std::string> names(all_names.begin(), all_names.end());
  std::map<std::string, std::map<int, int>> per_dataset;
  std::map<std::string, std::vector<Category>> local;
  for (const auto& [ds, space] : by_id) {
    auto& m = per_dataset[ds];
    std::map<int, int> owner;  // unified id -> local id, for the injectivity check
    for (const auto& [local_id, unified] : target_name[ds]) {
      const int u = static_cast<int>(std::lower_bound(names.begin(), names.end(), unified) - names.begin());
      if (auto [it, inserted] = owner.emplace(u, local_id); !inserted)
        fail(ErrorKind::configuration, "dataset '" + ds + "': categories " + std::to_string(it->second) + " and " +
                                           std::to_string(local_id) + " both resolve to unified category '" +
                                           unified + "'");
      m[local_id] = u;
    }
    auto cats = space->categories;
    std::sort(cats.begin(), cats.end(), [](const Category& a, const Category& b) { return a.id < b.id; });
    local[ds] = std::move(cats);
  }
  return UnifiedLabelSpace(std::move(names), std::move(per_dataset), std::move(local));
}

/// L* = (L_u \ L_i) u {background}: the candidate labels of a proposal that
/// matched no ground truth in an image of `dataset_id`. Ascending ids.
inline std::vector<int> ambiguous_set(const UnifiedLabelSpace& u, const std::string& dataset_id) {
  const auto annotated = u.mapped(dataset_id);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(u.num_classes()) - annotated.size());
  for (int c = 0; c < u.size(); ++c)
    if (!std::binary_search(annotated.begin(), annotated.end(), c)) out.push_back(c);
  out.push_back(u.background_id());
  return out;
}

/// Drops the named categories. Unknown names are an error; removing every
/// category is allowed but reported through `diag`.
inline DatasetLabelSpace restrict_categories(const DatasetLabelSpace& space, const std::set<std::string>& remove,
                                             Diagnostics* diag = nullptr) {
  std::set<std::string> wanted;
  for (const auto& name : remove) wanted.insert(normalize_name(name));
  std::set<std::string> present;
  for (const auto& c : space.categories) present.insert(normalize_name(c.name));
  std::string unknown;
  for (const auto& name : wanted) {
    if (present.count(name) == 0) unknown += (unknown.empty() ? "" : ", ") + name;
  }
  if (!unknown.empty())
    fail(ErrorKind::validation, "dataset '" + space.dataset_id + "' has no categories named: " + unknown);

  DatasetLabelSpace out{space.dataset_id, {}};
  for (const auto& c : space.categories)
    if (wanted.count(normalize_name(c.name)) == 0) out.categories.push_back(c);
  if (out.categories.empty() && !space.categories.empty())
    warn(diag, "dataset '" + space.dataset_id + "': every category was removed; label space is empty");
  return out;
}

}  // namespace unidet
