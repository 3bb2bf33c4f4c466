#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vitmat/errors.hpp"
#include "vitmat/image.hpp"
#include "vitmat/rng.hpp"

namespace vitmat {

/// Lowercase, with spaces and hyphens turned into underscores.
inline std::string normalize_class_name(std::string name) {
  for (auto& ch : name) {
    if (ch == ' ' || ch == '-') ch = '_';
    ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return name;
}

struct Sample {
  std::string path;
  std::size_t label = 0;

  bool operator==(const Sample&) const = default;
};

/// Class registry plus samples ordered by class name, then file path.
struct DatasetIndex {
  std::string name;
  std::vector<std::string> classes;
  std::vector<Sample> samples;
  std::vector<std::size_t> counts;
  std::vector<std::string> skipped;  // files ignored during a scan, with reasons

  std::size_t size() const { return samples.size(); }
  std::size_t num_classes() const { return classes.size(); }

  std::size_t class_id(const std::string& cls) const {
    const auto it = std::lower_bound(classes.begin(), classes.end(), cls);
    if (it == classes.end() || *it != cls) throw InputError("unknown class '" + cls + "' in dataset '" + name + "'");
    return static_cast<std::size_t>(it - classes.begin());
  }

  /// Builds an index from (path, class name) pairs. Class names are
  /// normalized; `extra_classes` registers classes that may have no samples.
  static DatasetIndex from_pairs(std::string name, const std::vector<std::pair<std::string, std::string>>& pairs,
                                 const std::vector<std::string>& extra_classes = {}) {
    std::set<std::string> names;
    for (const auto& c : extra_classes) names.insert(normalize_class_name(c));
    for (const auto& [_, c] : pairs) names.insert(normalize_class_name(c));
    DatasetIndex idx;
    idx.name = std::move(name);
    idx.classes.assign(names.begin(), names.end());
    idx.counts.assign(idx.classes.size(), 0);
    for (const auto& [path, c] : pairs) idx.samples.push_back({path, idx.class_id(normalize_class_name(c))});
    idx.finalize();
    return idx;
  }

  /// Sorts samples by (label, path) and recomputes counts.
  void finalize() {
    std::sort(samples.begin(), samples.end(),
              [](const Sample& a, const Sample& b) { return std::tie(a.label, a.path) < std::tie(b.label, b.path); });
    counts.assign(classes.size(), 0);
    for (const auto& s : samples) {
      if (s.label >= classes.size()) throw InputError("sample label out of range in dataset '" + name + "'");
      ++counts[s.label];
    }
  }

  bool operator==(const DatasetIndex&) const = default;
};

/// Scans root/<class>/<image>. Only .ppm/.pgm/.pnm files with a valid header
/// are indexed; everything else is recorded in `skipped`.
inline DatasetIndex scan_dataset(const std::filesystem::path& root, const std::string& name) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IngestionError("dataset root '" + root.string() + "' is not a directory");

  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  if (class_dirs.empty()) throw IngestionError("dataset root '" + root.string() + "' has no class directories");
  std::sort(class_dirs.begin(), class_dirs.end());

  std::vector<std::pair<std::string, std::string>> pairs;
  std::map<std::string, std::string> seen;  // normalized -> original dir name
  std::vector<std::string> skipped;
  for (const auto& dir : class_dirs) {
    const std::string original = dir.filename().string();
    const std::string cls = normalize_class_name(original);
    if (auto [it, fresh] = seen.emplace(cls, original); !fresh)
      throw IngestionError("class directories '" + it->second + "' and '" + original + "' both normalize to '" + cls +
                           "'");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t kept = 0;
    for (const auto& f : files) {
      if (!is_netpbm_path(f)) {
        skipped.push_back(f.string() + ": not a netpbm image");
        continue;
      }
      try {
        probe_netpbm(f);
      } catch (const IoError& e) {
        skipped.push_back(e.what());
        continue;
      }
      pairs.emplace_back(f.string(), cls);
      ++kept;
    }
    if (kept == 0) throw IngestionError("class '" + cls + "' has no readable images in '" + dir.string() + "'");
  }
  auto idx = DatasetIndex::from_pairs(name, pairs);
  idx.skipped = std::move(skipped);
  return idx;
}

/// {dataset: {source_class: merged_class}}; names are normalized on load.
struct ClassAliasMap {
  std::map<std::string, std::map<std::string, std::string>> by_dataset;
  bool identity_fallback = false;  // unmapped classes keep their own name

  static ClassAliasMap identity() {
    ClassAliasMap m;
    m.identity_fallback = true;
    return m;
  }

  /// String-valued top-level keys and keys starting with '_' are comments.
  static ClassAliasMap from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("alias map must be a JSON object");
    ClassAliasMap m;
    for (const auto& [dataset, table] : j.items()) {
      if (dataset.starts_with("_") || table.is_string()) continue;
      if (!table.is_object()) throw ConfigError("alias entry for dataset '" + dataset + "' must be an object");
      auto& dst = m.by_dataset[dataset];
      for (const auto& [src, merged] : table.items()) {
        if (src.starts_with("_")) continue;
        if (!merged.is_string()) throw ConfigError("alias for '" + dataset + "/" + src + "' must be a string");
        dst[normalize_class_name(src)] = normalize_class_name(merged.get<std::string>());
      }
    }
    return m;
  }

  static ClassAliasMap load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open alias map '" + path.string() + "'");
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("alias map '" + path.string() + "': " + e.what());
    }
  }

  std::string resolve(const std::string& dataset, const std::string& cls) const {
    const auto d = by_dataset.find(dataset);
    if (d != by_dataset.end()) {
      const auto c = d->second.find(cls);
      if (c != d->second.end()) return c->second;
    }
    if (identity_fallback) return cls;
    throw MappingError("class '" + cls + "' of dataset '" + dataset + "' has no entry in the alias map");
  }
};

/// Union of two indices with classes renamed through `alias`.
inline DatasetIndex merge_datasets(const DatasetIndex& a, const DatasetIndex& b, const ClassAliasMap& alias) {
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(a.size() + b.size());
  std::vector<std::string> classes;
  for (const auto* idx : {&a, &b}) {
    std::vector<std::string> renamed;
    for (const auto& c : idx->classes) renamed.push_back(alias.resolve(idx->name, c));
    classes.insert(classes.end(), renamed.begin(), renamed.end());
    for (const auto& s : idx->samples) pairs.emplace_back(s.path, renamed[s.label]);
  }
  return DatasetIndex::from_pairs(a.name + "+" + b.name, pairs, classes);
}

// ---- Imbalance statistics --------------------------------------------------

struct ClassHistogram {
  std::vector<std::size_t> counts;
  double imbalance_ratio = 1.0;  // max / min; infinity when a class is empty
};

inline ClassHistogram class_histogram(const DatasetIndex& index) {
  ClassHistogram h;
  h.counts.assign(index.num_classes(), 0);
  for (const auto& s : index.samples) ++h.counts.at(s.label);
  if (h.counts.empty()) return h;
  const auto [lo, hi] = std::minmax_element(h.counts.begin(), h.counts.end());
  h.imbalance_ratio = *lo == 0 ? std::numeric_limits<double>::infinity() : double(*hi) / double(*lo);
  return h;
}

// ---- Stratified split ------------------------------------------------------

struct SplitSpec {
  double train = 1.0;
  double val = 0.0;
  double test = 0.0;
  std::uint64_t seed = 0;

  std::array<double, 3> fractions() const { return {train, val, test}; }

  void validate() const {
    for (double f : fractions())
      if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
    if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  }

  /// "85/15" (train/test) or "70/15/15" (train/val/test), in percent.
  static SplitSpec parse(const std::string& text, std::uint64_t seed = 0) {
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, '/')) {
      try {
        std::size_t used = 0;
        parts.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ConfigError("invalid split mode '" + text + "'");
      }
    }
    SplitSpec s;
    s.seed = seed;
    if (parts.size() == 2) {
      s.train = parts[0] / 100.0;
      s.val = 0.0;
      s.test = parts[1] / 100.0;
    } else if (parts.size() == 3) {
      s.train = parts[0] / 100.0;
      s.val = parts[1] / 100.0;
      s.test = parts[2] / 100.0;
    } else {
      throw ConfigError("split mode '" + text + "' must have 2 or 3 parts");
    }
    s.validate();
    return s;
  }
};

struct SplitResult {
  std::vector<std::size_t> train, val, test;  // sample ids into the index

  bool operator==(const SplitResult&) const = default;
};

/// Largest-remainder allocation of n items over the three fractions: each
/// partition gets floor(f * n), then leftover items go to the largest
/// fractional parts. Equal fractional parts favor the earlier partition
/// (train, then val, then test).
inline std::array<std::size_t, 3> allocate_counts(std::size_t n, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t p = 0; p < 3; ++p) {
    const double target = fractions[p] * static_cast<double>(n);
    // snap values within rounding noise of an integer, e.g. 0.7 * 10
    const double snapped = std::abs(target - std::round(target)) < 1e-9 ? std::round(target) : target;
    out[p] = static_cast<std::size_t>(std::floor(snapped));
    rem[p] = snapped - std::floor(snapped);
    used += out[p];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-9; });
  for (std::size_t i = 0; used < n; ++i, ++used) ++out[order[i % 3]];
  return out;
}

/// Per class: shuffle the class members with rng substream `class id`, then
/// cut them into train/val/test by allocate_counts.
inline SplitResult stratified_split(const DatasetIndex& index, const SplitSpec& spec) {
  spec.validate();
  const auto fractions = spec.fractions();
  static const char* kNames[] = {"train", "val", "test"};
  std::vector<std::vector<std::size_t>> members(index.num_classes());
  for (std::size_t i = 0; i < index.size(); ++i) members.at(index.samples[i].label).push_back(i);

  SplitResult r;
  std::array<std::vector<std::size_t>*, 3> parts = {&r.train, &r.val, &r.test};
  const Rng root(spec.seed);
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& ids = members[c];
    const auto alloc = allocate_counts(ids.size(), fractions);
    for (std::size_t p = 0; p < 3; ++p)
      if (fractions[p] > 0.0 && alloc[p] == 0)
        throw SplitError("class '" + index.classes[c] + "' (" + std::to_string(ids.size()) +
                         " samples) is too small to give the " + kNames[p] + " partition any sample");
    Rng rng = root.substream(c);
    rng.shuffle(ids.begin(), ids.end());
    std::size_t pos = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      parts[p]->insert(parts[p]->end(), ids.begin() + pos, ids.begin() + pos + alloc[p]);
      pos += alloc[p];
    }
  }
  for (auto* p : parts) std::sort(p->begin(), p->end());
  return r;
}

// ---- k-fold ------------------------------------------------------------------

struct FoldPlan {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  std::vector<std::size_t> assignment;  // fold id per sample
  std::vector<std::string> warnings;

  std::vector<std::size_t> test_ids(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == fold) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> train_ids(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != fold) out.push_back(i);
    return out;
  }
};

/// Shuffles each class (substream = class id), then deals its members to the
/// folds round-robin. The dealing position carries over from one class to the
/// next, so small classes do not all pile into fold 0.
inline FoldPlan kfold(const DatasetIndex& index, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InputError("kfold: k must be >= 2, got " + std::to_string(k));
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignment.assign(index.size(), 0);
  std::vector<std::vector<std::size_t>> members(index.num_classes());
  for (std::size_t i = 0; i < index.size(); ++i) members.at(index.samples[i].label).push_back(i);
  const Rng root(seed);
  std::size_t next = 0;
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& ids = members[c];
    if (ids.size() < k)
      plan.warnings.push_back("class '" + index.classes[c] + "' has " + std::to_string(ids.size()) +
                              " samples, fewer than k=" + std::to_string(k) + "; some folds get none");
    Rng rng = root.substream(c);
    rng.shuffle(ids.begin(), ids.end());
    for (std::size_t id : ids) plan.assignment[id] = next++ % k;
  }
  return plan;
}

// ---- Manifests ------------------------------------------------------------------

struct ManifestEntry {
  std::string path;
  std::string cls;
  std::string partition;  // "train"/"val"/"test", or the fold number as text

  bool operator==(const ManifestEntry&) const = default;
};

inline nlohmann::json split_manifest(const DatasetIndex& index, const SplitResult& split) {
  std::vector<std::string> part(index.size());
  for (auto id : split.train) part.at(id) = "train";
  for (auto id : split.val) part.at(id) = "val";
  for (auto id : split.test) part.at(id) = "test";
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i < index.size(); ++i)
    j.push_back({{"path", index.samples[i].path}, {"class", index.classes[index.samples[i].label]}, {"partition", part[i]}});
  return j;
}

inline nlohmann::json fold_manifest(const DatasetIndex& index, const FoldPlan& plan) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i < index.size(); ++i)
    j.push_back({{"path", index.samples[i].path},
                 {"class", index.classes[index.samples[i].label]},
                 {"fold", plan.assignment.at(i)}});
  return j;
}

inline std::vector<ManifestEntry> parse_manifest(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("manifest must be a JSON array");
  std::vector<ManifestEntry> out;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("path") || !e.contains("class"))
      throw ConfigError("manifest entries need 'path' and 'class'");
    ManifestEntry m{e["path"].get<std::string>(), normalize_class_name(e["class"].get<std::string>()), ""};
    if (e.contains("partition")) m.partition = e["partition"].get<std::string>();
    if (e.contains("fold")) m.partition = std::to_string(e["fold"].get<std::size_t>());
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// ---- Published class lists ------------------------------------------------------

/// The 11 classes of the building-material dataset (1231 images), normalized.
inline std::vector<std::string> bmd_classes() {
  return {"brick", "soil", "sandstorms", "gravel", "stone", "asphalt",
          "cement_granular", "wood", "clay_hollow_block", "paving", "concrete_block"};
}

/// The 20 classes of the construction-material library (3266 images), normalized.
inline std::vector<std::string> cml_classes() {
  return {"asphalt",       "brick",           "cement_granular", "cement_smooth",   "concrete_cast",
          "concrete_precast", "foliage",      "form_work",       "grass",           "gravel",
          "marble",        "metal_grills",    "paving",          "soil_compact",    "soil_vegetation",
          "soil_loose",    "soil_mulch",      "stone_granular",  "stone_limestone", "wood"};
}

}  // namespace vitmat
