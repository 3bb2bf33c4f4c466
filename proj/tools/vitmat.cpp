#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vitmat/vitmat.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vitmat;

namespace {

enum ExitCode { kOk = 0, kConfigExit = 1, kIoExit = 2, kTrainExit = 3, kMismatchExit = 4 };

// ---- Manifests ------------------------------------------------------------------
// A manifest is {"name", "classes", "counts", "samples": [{"path", "class", "partition"|"fold"}]}.

struct Manifest {
  DatasetIndex index;
  std::vector<std::string> partition;  // per sample in index order; empty strings when absent
};

json manifest_json(const DatasetIndex& idx, json samples) {
  json j = {{"name", idx.name}, {"classes", idx.classes}, {"counts", idx.counts}, {"samples", std::move(samples)}};
  if (!idx.skipped.empty()) j["skipped"] = idx.skipped;
  return j;
}

json plain_samples(const DatasetIndex& idx) {
  json s = json::array();
  for (const auto& x : idx.samples) s.push_back({{"path", x.path}, {"class", idx.classes[x.label]}});
  return s;
}

Manifest load_manifest(const fs::path& path) {
  const json j = read_json_file(path);
  if (!j.is_object() || !j.contains("samples")) throw ConfigError("'" + path.string() + "' is not a dataset manifest");
  const auto entries = parse_manifest(j["samples"]);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::map<std::string, std::string> part;
  for (const auto& e : entries) {
    if (!part.emplace(e.path, e.partition).second)
      throw InputError("manifest '" + path.string() + "' lists '" + e.path + "' twice");
    pairs.emplace_back(e.path, e.cls);
  }
  const auto extra = j.value("classes", std::vector<std::string>{});
  Manifest m{DatasetIndex::from_pairs(j.value("name", path.stem().string()), pairs, extra), {}};
  for (const auto& s : m.index.samples) m.partition.push_back(part.at(s.path));
  return m;
}

std::vector<std::size_t> ids_in(const Manifest& m, const std::string& partition) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < m.partition.size(); ++i)
    if (partition == "all" || m.partition[i] == partition) ids.push_back(i);
  return ids;
}

// A dataset argument is either a manifest file or a directory tree to scan.
Manifest load_dataset(const fs::path& p, const std::string& name) {
  std::error_code ec;
  if (fs::is_directory(p, ec)) {
    auto idx = scan_dataset(p, name.empty() ? p.filename().string() : name);
    std::vector<std::string> part(idx.size());
    return {std::move(idx), std::move(part)};
  }
  if (!fs::exists(p, ec)) throw ConfigError("dataset '" + p.string() + "' does not exist");
  auto m = load_manifest(p);
  if (!name.empty()) m.index.name = name;
  return m;
}

// Renames classes through the alias map, keeping partitions.
Manifest apply_alias(const Manifest& m, const ClassAliasMap& alias) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::map<std::string, std::string> part;
  std::vector<std::string> renamed;
  for (const auto& c : m.index.classes) renamed.push_back(alias.resolve(m.index.name, c));
  for (std::size_t i = 0; i < m.index.size(); ++i) {
    pairs.emplace_back(m.index.samples[i].path, renamed[m.index.samples[i].label]);
    part[m.index.samples[i].path] = m.partition[i];
  }
  Manifest out{DatasetIndex::from_pairs(m.index.name, pairs, renamed), {}};
  for (const auto& s : out.index.samples) out.partition.push_back(part.at(s.path));
  return out;
}

// Relabels `m` onto the class registry of a model; class counts must agree.
Manifest relabel_to(const Manifest& m, const std::vector<std::string>& model_classes, std::size_t model_k,
                    const std::string& context) {
  if (m.index.num_classes() != model_k) throw ClassCountMismatchError(model_k, m.index.num_classes(), context);
  if (model_classes.empty()) return m;
  std::vector<std::string> sorted = model_classes;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != m.index.classes) {
    for (const auto& c : m.index.classes)
      if (!std::binary_search(sorted.begin(), sorted.end(), c))
        throw MappingError(context + ": dataset class '" + c + "' is not a model class");
  }
  // model ids follow the checkpoint's class order, which may differ from sorted order
  Manifest out = m;
  out.index.classes = model_classes;
  std::vector<std::size_t> remap(m.index.num_classes());
  for (std::size_t c = 0; c < remap.size(); ++c)
    remap[c] = static_cast<std::size_t>(std::find(model_classes.begin(), model_classes.end(), m.index.classes[c]) -
                                        model_classes.begin());
  std::vector<std::size_t> counts(model_k, 0);
  for (auto& s : out.index.samples) {
    s.label = remap[s.label];
    ++counts[s.label];
  }
  out.index.counts = counts;
  return out;
}

// ---- Run configuration ----------------------------------------------------------

struct DatasetRef {
  std::string name;
  fs::path path;  // manifest file or directory tree
};

struct RunConfig {
  std::vector<DatasetRef> datasets;
  fs::path alias_map;
  std::string preset = "tiny";
  json model = json::object();  // explicit ViTConfig fields over the preset
  TrainConfig train;
  std::optional<std::string> split;
  std::optional<std::size_t> folds;
  fs::path output_dir = "out";
  std::uint64_t seed = 0;

  ViTConfig model_config(std::size_t classes) const {
    json j = ViTConfig::preset(preset, classes);
    j.update(model);
    j["num_classes"] = classes;
    auto cfg = j.get<ViTConfig>();
    cfg.validate();
    return cfg;
  }
};

json to_json(const RunConfig& c) {
  json ds = json::array();
  for (const auto& d : c.datasets) ds.push_back({{"name", d.name}, {"path", d.path.string()}});
  json j = {{"datasets", ds},  {"preset", c.preset}, {"model", c.model},
            {"train", c.train}, {"output_dir", c.output_dir.string()}, {"seed", c.seed}};
  if (!c.alias_map.empty()) j["alias_map"] = c.alias_map.string();
  if (c.split) j["split"] = *c.split;
  if (c.folds) j["folds"] = *c.folds;
  return j;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() || base.empty() ? q : (base / q).lexically_normal();
}

// Relative paths in a config file are taken relative to the file.
RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  const json j = read_json_file(path);
  if (!j.is_object()) throw ConfigError("config '" + path + "' must be a JSON object");
  const fs::path base = fs::path(path).parent_path();
  try {
    for (const auto& d : j.value("datasets", json::array()))
      c.datasets.push_back({d.value("name", ""), resolve(base, d.at("path").get<std::string>())});
    if (j.contains("alias_map")) c.alias_map = resolve(base, j["alias_map"].get<std::string>());
    c.preset = j.value("preset", c.preset);
    c.model = j.value("model", json::object());
    if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
    if (j.contains("split")) c.split = j["split"].get<std::string>();
    if (j.contains("folds")) c.folds = j["folds"].get<std::size_t>();
    if (j.contains("output_dir")) c.output_dir = resolve(base, j["output_dir"].get<std::string>());
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return c;
}

// Flag > VITMAT_OUT > config value.
fs::path output_dir(const std::string& flag, const fs::path& configured) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("VITMAT_OUT"); env && *env) return env;
  return configured;
}

void check_paths(const RunConfig& c) {
  if (c.datasets.empty()) throw ConfigError("config names no datasets");
  if (c.datasets.size() > 2) throw ConfigError("at most two datasets can be merged");
  std::error_code ec;
  for (const auto& d : c.datasets)
    if (!fs::exists(d.path, ec)) throw ConfigError("dataset path '" + d.path.string() + "' does not exist");
  if (!c.alias_map.empty() && !fs::exists(c.alias_map, ec))
    throw ConfigError("alias map '" + c.alias_map.string() + "' does not exist");
}

ClassAliasMap alias_of(const RunConfig& c) {
  return c.alias_map.empty() ? ClassAliasMap::identity() : ClassAliasMap::load(c.alias_map);
}

Manifest load_run_data(const RunConfig& c) {
  check_paths(c);
  auto first = load_dataset(c.datasets[0].path, c.datasets[0].name);
  if (c.datasets.size() == 1) return c.alias_map.empty() ? first : apply_alias(first, alias_of(c));
  const auto second = load_dataset(c.datasets[1].path, c.datasets[1].name);
  auto merged = merge_datasets(first.index, second.index, alias_of(c));
  std::vector<std::string> part(merged.size());
  return {std::move(merged), std::move(part)};
}

void create_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

void print_histogram(const DatasetIndex& idx) {
  const auto h = class_histogram(idx);
  std::printf("dataset %s: %zu samples, %zu classes\n", idx.name.c_str(), idx.size(), idx.num_classes());
  for (std::size_t c = 0; c < idx.num_classes(); ++c) std::printf("  %-28s %zu\n", idx.classes[c].c_str(), h.counts[c]);
  std::printf("imbalance ratio (max/min): %.2f\n", h.imbalance_ratio);
}

// ---- Shared option groups -----------------------------------------------------------

struct Overrides {
  std::optional<std::size_t> epochs, batch_size, folds;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision, preset, split;
  std::vector<std::string> datasets;
  std::string alias, out;
  bool no_augment = false;

  void add_to(CLI::App* cmd, bool with_split) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--batch-size", batch_size, "Images per Adam step");
    cmd->add_option("--seed", seed, "Seed for splitting, initialization and augmentation");
    cmd->add_option("--precision", precision, "float32 or float64");
    cmd->add_option("--preset", preset, "Model preset: tiny or base16");
    cmd->add_option("--dataset", datasets, "Manifest or directory; give twice to merge");
    cmd->add_option("--alias", alias, "Class alias map JSON");
    cmd->add_option("--out", out, "Output directory");
    cmd->add_flag("--no-augment", no_augment, "Train on resized images only");
    if (with_split) cmd->add_option("--split", split, "Split mode, e.g. 70/15/15");
  }

  void apply(RunConfig& c) const {
    if (epochs) c.train.epochs = *epochs;
    if (lr) c.train.learning_rate = *lr;
    if (batch_size) c.train.batch_size = *batch_size;
    if (seed) c.seed = *seed;
    if (precision) c.train.precision = parse_precision(*precision);
    if (preset) c.preset = *preset;
    if (!datasets.empty()) {
      c.datasets.clear();
      for (const auto& d : datasets) c.datasets.push_back({"", d});
    }
    if (!alias.empty()) c.alias_map = alias;
    if (no_augment) c.train.augment = AugPolicy::none(c.train.augment.image_size);
    if (split) {
      c.split = *split;
      c.folds.reset();
    }
    if (folds) {
      c.folds = *folds;
      c.split.reset();
    }
    c.output_dir = output_dir(out, c.output_dir);
    c.train.seed = c.seed;
  }
};

// ---- Commands ---------------------------------------------------------------------

int cmd_scan(const std::string& root, std::string name, const std::string& out) {
  if (name.empty()) name = fs::path(root).filename().string();
  const auto idx = scan_dataset(fs::absolute(root).lexically_normal(), name);
  const auto dir = output_dir(out, ".");
  create_dir(dir);
  write_json_file(manifest_json(idx, plain_samples(idx)), dir / (name + ".json"));
  print_histogram(idx);
  if (!idx.skipped.empty()) std::printf("skipped %zu files\n", idx.skipped.size());
  std::printf("manifest: %s\n", (dir / (name + ".json")).string().c_str());
  return kOk;
}

int cmd_merge(const std::string& a, const std::string& b, const std::string& alias_path, const std::string& out) {
  const auto alias = alias_path.empty() ? ClassAliasMap::identity() : ClassAliasMap::load(alias_path);
  const auto ma = load_dataset(a, ""), mb = load_dataset(b, "");
  const auto merged = merge_datasets(ma.index, mb.index, alias);
  const auto dir = output_dir(out, ".");
  create_dir(dir);
  write_json_file(manifest_json(merged, plain_samples(merged)), dir / (merged.name + ".json"));
  print_histogram(merged);
  return kOk;
}

int cmd_split(const std::string& manifest, const std::string& mode, std::optional<std::size_t> k, std::uint64_t seed,
              const std::string& out) {
  if (mode.empty() == !k) throw ConfigError("split: give exactly one of --mode and --k");
  const auto m = load_dataset(manifest, "");
  json samples;
  std::string file;
  if (k) {
    const auto plan = kfold(m.index, *k, seed);
    for (const auto& w : plan.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    samples = fold_manifest(m.index, plan);
    file = m.index.name + "_folds.json";
  } else {
    const auto r = stratified_split(m.index, SplitSpec::parse(mode, seed));
    samples = split_manifest(m.index, r);
    file = m.index.name + "_split.json";
    std::printf("train %zu  val %zu  test %zu\n", r.train.size(), r.val.size(), r.test.size());
  }
  const auto dir = output_dir(out, ".");
  create_dir(dir);
  write_json_file(manifest_json(m.index, samples), dir / file);
  std::printf("manifest: %s\n", (dir / file).string().c_str());
  return kOk;
}

struct TrainPlan {
  RunConfig cfg;
  Manifest data;
  ViTConfig model;
  std::vector<std::size_t> train_ids, val_ids;
};

TrainPlan plan_training(RunConfig cfg) {
  if (cfg.folds) throw ConfigError("train: the config selects fold mode; use 'cv' or give --split");
  cfg.train.validate();
  auto data = load_run_data(cfg);
  if (cfg.split) {
    const auto r = stratified_split(data.index, SplitSpec::parse(*cfg.split, cfg.seed));
    data.partition.assign(data.index.size(), "");
    for (auto id : r.train) data.partition[id] = "train";
    for (auto id : r.val) data.partition[id] = "val";
    for (auto id : r.test) data.partition[id] = "test";
  }
  TrainPlan p{cfg, data, cfg.model_config(data.index.num_classes()), {}, {}};
  const bool partitioned = std::any_of(data.partition.begin(), data.partition.end(), [](auto& s) { return !s.empty(); });
  p.train_ids = partitioned ? ids_in(data, "train") : ids_in(data, "all");
  p.val_ids = partitioned ? ids_in(data, "val") : std::vector<std::size_t>{};
  if (p.train_ids.empty()) throw ConfigError("train: the train partition is empty");
  p.cfg.train.augment.image_size = p.model.image_size;
  p.cfg.train.augment.validate();
  return p;
}

json partition_samples(const Manifest& m) {
  json s = json::array();
  for (std::size_t i = 0; i < m.index.size(); ++i) {
    json e = {{"path", m.index.samples[i].path}, {"class", m.index.classes[m.index.samples[i].label]}};
    if (!m.partition[i].empty()) e["partition"] = m.partition[i];
    s.push_back(e);
  }
  return s;
}

template <typename T>
int run_training(const TrainPlan& p) {
  const auto& dir = p.cfg.output_dir;
  create_dir(dir);
  write_json_file(to_json(p.cfg), dir / "config.json");
  write_json_file(manifest_json(p.data.index, partition_samples(p.data)), dir / "split.json");
  IndexSource src(p.data.index, p.model.image_size);
  auto model = Model<T>::initialize(p.model, Rng(p.cfg.seed).substream(0).next_u64(), p.data.index.classes);
  const auto r = fit(model, src, p.train_ids, p.val_ids, p.cfg.train, dir, true);
  const auto& last = r.history.back();
  std::printf("final train_acc %.4f", last.train_acc);
  if (last.val_acc) std::printf(" val_acc %.4f best val_acc %.4f (epoch %zu)", *last.val_acc, r.best_val_acc, r.best_epoch);
  std::printf("\ncheckpoint: %s\n", (dir / "last.vitc").string().c_str());
  return kOk;
}

int cmd_train(RunConfig cfg) {
  const auto plan = plan_training(std::move(cfg));
  return plan.cfg.train.precision == Precision::f64 ? run_training<double>(plan) : run_training<float>(plan);
}

struct EvalOptions {
  std::string checkpoint, partition = "all", stem = "report";
  bool tta = false;
  std::size_t tta_count = kDefaultTtaCount;
  std::string train_set, test_set;
};

void write_and_print(const EvalReport& r, const fs::path& dir, const std::string& stem) {
  emit_report(r, dir, stem);
  std::printf("overall accuracy %.4f  macro f1 %.4f  (%zu samples)\n", r.overall_accuracy, r.macro_f1,
              r.confusion.total());
  std::printf("report: %s\n", (dir / (stem + ".json")).string().c_str());
}

// Cross-dataset mode: train on every sample of one set, evaluate on another.
int cmd_eval_cross(RunConfig cfg, const EvalOptions& o) {
  cfg.train.validate();
  cfg.datasets = {{"", o.train_set}, {"", o.test_set}};
  check_paths(cfg);
  const auto alias = alias_of(cfg);
  const auto train = apply_alias(load_dataset(o.train_set, ""), alias);
  auto model_cfg = cfg.model_config(train.index.num_classes());
  const auto test = relabel_to(apply_alias(load_dataset(o.test_set, ""), alias), train.index.classes,
                               model_cfg.num_classes, "eval --test-set");
  cfg.train.augment.image_size = model_cfg.image_size;
  cfg.train.augment.validate();

  create_dir(cfg.output_dir);
  write_json_file(to_json(cfg), cfg.output_dir / "config.json");
  IndexSource train_src(train.index, model_cfg.image_size), test_src(test.index, model_cfg.image_size);
  auto model = Model<float>::initialize(model_cfg, Rng(cfg.seed).substream(0).next_u64(), train.index.classes);
  fit(model, train_src, ids_in(train, "all"), {}, cfg.train, cfg.output_dir, true);
  ReportMeta meta{train.index.name + " -> " + test.index.name, (cfg.output_dir / "last.vitc").string()};
  const auto r = evaluate(model, test_src, ids_in(test, "all"), cfg.train.augment, o.tta ? o.tta_count : 1, cfg.seed,
                          meta);
  write_and_print(r, cfg.output_dir, o.stem);
  return kOk;
}

int cmd_eval(RunConfig cfg, const EvalOptions& o) {
  if (o.tta && o.tta_count == 0) throw InputError("eval: --tta-count must be >= 1");
  if (o.train_set.empty() != o.test_set.empty()) throw ConfigError("eval: --train-set and --test-set go together");
  if (!o.train_set.empty()) return cmd_eval_cross(std::move(cfg), o);
  if (o.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  if (cfg.datasets.size() != 1) throw ConfigError("eval: give exactly one --dataset");
  const auto& partition = o.partition;
  if (partition != "all" && partition != "train" && partition != "val" && partition != "test")
    throw ConfigError("eval: --partition must be all, train, val or test");
  check_paths(cfg);
  const auto ck = load_checkpoint(o.checkpoint);
  auto data = load_dataset(cfg.datasets[0].path, cfg.datasets[0].name);
  if (!cfg.alias_map.empty()) data = apply_alias(data, alias_of(cfg));
  data = relabel_to(data, ck.class_names, ck.config.num_classes, "eval");
  const auto ids = ids_in(data, partition);
  if (ids.empty()) throw InputError("eval: partition '" + partition + "' has no samples");

  auto model = Model<float>::from_checkpoint(ck);
  if (model.class_names.empty()) model.class_names = data.index.classes;
  IndexSource src(data.index, ck.config.image_size);
  ReportMeta meta{data.index.name + (partition == "all" ? "" : ":" + partition), o.checkpoint};
  const auto r = evaluate(model, src, ids, cfg.train.augment, o.tta ? o.tta_count : 1, cfg.seed, meta);
  create_dir(cfg.output_dir);
  write_and_print(r, cfg.output_dir, o.stem);
  return kOk;
}

template <typename T>
int run_cv(const RunConfig& cfg, const Manifest& data, const ViTConfig& model_cfg, const FoldPlan& plan) {
  const auto& dir = cfg.output_dir;
  create_dir(dir);
  write_json_file(to_json(cfg), dir / "config.json");
  write_json_file(manifest_json(data.index, fold_manifest(data.index, plan)), dir / "folds.json");
  IndexSource src(data.index, model_cfg.image_size);
  const auto r = cv_evaluate<T>(model_cfg, data.index.classes, src, plan, cfg.train, true);
  for (std::size_t f = 0; f < r.fold_reports.size(); ++f) {
    const auto stem = "fold_" + std::to_string(f + 1);
    emit_report(r.fold_reports[f], dir, stem);
    std::printf("fold %zu accuracy %.4f\n", f + 1, r.fold_reports[f].overall_accuracy);
  }
  const auto text = format_mean_std(r.summary.mean, r.summary.std);
  write_json_file({{"k", plan.k},
                   {"accuracies", r.summary.accuracies},
                   {"mean", r.summary.mean},
                   {"std", r.summary.std},
                   {"summary", text}},
                  dir / "cv_summary.json");
  std::printf("accuracy %s\n", text.c_str());
  return kOk;
}

int cmd_cv(RunConfig cfg) {
  if (cfg.split) throw ConfigError("cv: the config selects split mode; give --k to run folds");
  if (!cfg.folds) cfg.folds = 5;
  cfg.train.validate();
  const auto data = load_run_data(cfg);
  const auto model_cfg = cfg.model_config(data.index.num_classes());
  cfg.train.augment.image_size = model_cfg.image_size;
  cfg.train.augment.validate();
  const auto plan = kfold(data.index, *cfg.folds, cfg.seed);
  for (const auto& w : plan.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return cfg.train.precision == Precision::f64 ? run_cv<double>(cfg, data, model_cfg, plan)
                                               : run_cv<float>(cfg, data, model_cfg, plan);
}

int cmd_predict(const std::string& checkpoint, const std::string& image, bool tta, std::size_t count,
                std::uint64_t seed, const AugPolicy& policy) {
  if (tta && count == 0) throw InputError("predict: --tta-count must be >= 1");
  const auto model = Model<float>::from_checkpoint(load_checkpoint(checkpoint));
  const auto img = read_netpbm(image);
  auto name = [&](std::size_t c) {
    return c < model.class_names.size() ? model.class_names[c] : "class_" + std::to_string(c);
  };
  if (!tta) {
    std::printf("%s\n", name(predict(model, img, policy)).c_str());
    return kOk;
  }
  const auto v = tta_predict(model, img, policy, count, Rng(seed));
  std::printf("%s\n", name(v.label).c_str());
  for (std::size_t c = 0; c < v.votes.size(); ++c)
    if (v.votes[c] > 0) std::printf("  %s %zu\n", name(c).c_str(), v.votes[c]);
  if (v.tie) std::printf("  (tie broken toward the lowest class id)\n");
  return kOk;
}

int cmd_augment_preview(const std::string& image, AugPolicy policy, std::size_t count, std::uint64_t seed,
                        const fs::path& dir) {
  if (count == 0) throw InputError("augment-preview: --count must be >= 1");
  policy.validate();
  const auto img = read_netpbm(image);
  const auto variants = tta_variants(img, policy, Rng(seed), count);
  create_dir(dir);
  for (std::size_t i = 0; i < variants.size(); ++i) {
    char file[32];
    std::snprintf(file, sizeof file, "preview_%03zu.ppm", i);
    write_ppm(variants[i], dir / file);
  }
  std::printf("wrote %zu previews to %s\n", variants.size(), dir.string().c_str());
  return kOk;
}

int cmd_make_synthetic(const std::vector<std::size_t>& counts, std::size_t size, std::uint64_t seed,
                       const fs::path& dir) {
  if (counts.empty() || counts.size() > kTextures.size()) throw InputError("make-synthetic: give 1 to 4 class counts");
  if (size == 0) throw InputError("make-synthetic: --size must be >= 1");
  create_dir(dir);
  write_texture_set(dir, counts, size, seed);
  std::size_t n = 0;
  for (auto c : counts) n += c;
  std::printf("wrote %zu images in %zu classes to %s\n", n, counts.size(), dir.string().c_str());
  return kOk;
}

int report(const char* kind, const std::exception& e, int code) {
  std::fprintf(stderr, "vitmat: %s: %s\n", kind, e.what());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision transformer toolkit for material image classification"};
  app.require_subcommand(1);
  std::string config_path;

  auto* scan = app.add_subcommand("scan", "Index a class-per-directory image tree");
  std::string scan_root, scan_name, scan_out;
  scan->add_option("root", scan_root, "Dataset root")->required();
  scan->add_option("--name", scan_name, "Dataset name (default: directory name)");
  scan->add_option("--out", scan_out, "Output directory");

  auto* merge = app.add_subcommand("merge", "Merge two dataset manifests through an alias map");
  std::string merge_a, merge_b, merge_alias, merge_out;
  merge->add_option("first", merge_a, "First manifest or tree")->required();
  merge->add_option("second", merge_b, "Second manifest or tree")->required();
  merge->add_option("--alias", merge_alias, "Class alias map JSON (default: exact names)");
  merge->add_option("--out", merge_out, "Output directory");

  auto* split = app.add_subcommand("split", "Stratified split or k-fold plan of a manifest");
  std::string split_manifest_path, split_mode, split_out;
  std::optional<std::size_t> split_k;
  std::uint64_t split_seed = 0;
  split->add_option("manifest", split_manifest_path, "Manifest or tree")->required();
  split->add_option("--mode", split_mode, "Split mode, e.g. 70/15/15 or 85/15");
  split->add_option("--k", split_k, "Number of folds");
  split->add_option("--seed", split_seed, "Split seed");
  split->add_option("--out", split_out, "Output directory");

  auto* train = app.add_subcommand("train", "Train a model from a run config");
  Overrides train_ov;
  train->add_option("--config", config_path, "Run config JSON");
  train_ov.add_to(train, true);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write reports");
  Overrides eval_ov;
  EvalOptions eval_opt;
  eval->add_option("--config", config_path, "Run config JSON (augmentation policy, alias map)");
  eval->add_option("--checkpoint", eval_opt.checkpoint, "Checkpoint file");
  eval->add_option("--partition", eval_opt.partition, "all, train, val or test");
  eval->add_flag("--tta", eval_opt.tta, "Majority vote over augmented copies");
  eval->add_option("--tta-count", eval_opt.tta_count, "Copies per image including the original");
  eval->add_option("--train-set", eval_opt.train_set, "Cross-dataset mode: training manifest or tree");
  eval->add_option("--test-set", eval_opt.test_set, "Cross-dataset mode: test manifest or tree");
  eval->add_option("--stem", eval_opt.stem, "Report file stem");
  eval_ov.add_to(eval, false);

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  Overrides cv_ov;
  cv->add_option("--config", config_path, "Run config JSON");
  cv->add_option("--k", cv_ov.folds, "Number of folds (default 5)");
  cv_ov.add_to(cv, false);

  auto* pred = app.add_subcommand("predict", "Classify one image");
  std::string pred_ck, pred_img;
  bool pred_tta = false;
  std::size_t pred_count = kDefaultTtaCount;
  std::uint64_t pred_seed = 0;
  pred->add_option("--checkpoint", pred_ck, "Checkpoint file")->required();
  pred->add_option("image", pred_img, "PPM/PGM image")->required();
  pred->add_option("--config", config_path, "Run config JSON (augmentation policy)");
  pred->add_flag("--tta", pred_tta, "Majority vote over augmented copies");
  pred->add_option("--tta-count", pred_count, "Copies including the original");
  pred->add_option("--seed", pred_seed, "Augmentation seed");

  auto* prev = app.add_subcommand("augment-preview", "Write augmented copies of an image");
  std::string prev_img, prev_out;
  std::size_t prev_count = 8;
  std::optional<std::size_t> prev_size;
  std::uint64_t prev_seed = 0;
  prev->add_option("image", prev_img, "PPM/PGM image")->required();
  prev->add_option("--config", config_path, "Run config JSON (augmentation policy)");
  prev->add_option("--count", prev_count, "Number of files; the first is the resized original");
  prev->add_option("--size", prev_size, "Output side length");
  prev->add_option("--seed", prev_seed, "Augmentation seed");
  prev->add_option("--out", prev_out, "Output directory");

  auto* synth = app.add_subcommand("make-synthetic", "Write a procedural texture dataset");
  std::vector<std::size_t> synth_counts{40, 25, 10, 5};
  std::size_t synth_size = 32;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--counts", synth_counts, "Images per class (stripes, checker, noise, gradient)")->delimiter(',');
  synth->add_option("--size", synth_size, "Image side length");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigExit;
  }

  try {
    if (*scan) return cmd_scan(scan_root, scan_name, scan_out);
    if (*merge) return cmd_merge(merge_a, merge_b, merge_alias, merge_out);
    if (*split) return cmd_split(split_manifest_path, split_mode, split_k, split_seed, split_out);
    RunConfig cfg = load_run_config(config_path);
    if (*train) {
      train_ov.apply(cfg);
      return cmd_train(cfg);
    }
    if (*eval) {
      eval_ov.apply(cfg);
      return cmd_eval(cfg, eval_opt);
    }
    if (*cv) {
      cv_ov.apply(cfg);
      return cmd_cv(cfg);
    }
    if (*pred) {
      auto policy = cfg.train.augment;
      return cmd_predict(pred_ck, pred_img, pred_tta, pred_count, pred_seed, policy);
    }
    if (*prev) {
      auto policy = cfg.train.augment;
      if (prev_size) policy.image_size = *prev_size;
      return cmd_augment_preview(prev_img, policy, prev_count, prev_seed, output_dir(prev_out, "preview"));
    }
    if (*synth) return cmd_make_synthetic(synth_counts, synth_size, synth_seed, synth_out);
  } catch (const ClassCountMismatchError& e) {
    return report("model/dataset mismatch", e, kMismatchExit);
  } catch (const MappingError& e) {
    return report("model/dataset mismatch", e, kMismatchExit);
  } catch (const TrainingError& e) {
    return report("training failed", e, kTrainExit);
  } catch (const IngestionError& e) {
    return report("ingestion error", e, kIoExit);
  } catch (const IoError& e) {
    return report("i/o error", e, kIoExit);
  } catch (const Error& e) {
    return report("invalid input", e, kConfigExit);
  } catch (const json::exception& e) {
    return report("invalid config", e, kConfigExit);
  } catch (const std::exception& e) {
    return report("error", e, kConfigExit);
  }
  return kConfigExit;
}
