#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitmat/adam.hpp"
#include "vitmat/augment.hpp"
#include "vitmat/checkpoint.hpp"
#include "vitmat/data.hpp"
#include "vitmat/image.hpp"
#include "vitmat/loss.hpp"
#include "vitmat/vit.hpp"

namespace vitmat {

enum class Precision { f32, f64 };

inline Precision parse_precision(const std::string& s) {
  if (s == "f32" || s == "float32" || s == "32") return Precision::f32;
  if (s == "f64" || s == "float64" || s == "64") return Precision::f64;
  throw ConfigError("unknown precision '" + s + "' (expected float32 or float64)");
}

inline std::string to_string(Precision p) { return p == Precision::f32 ? "float32" : "float64"; }

struct TrainConfig {
  std::size_t epochs = 25;
  double learning_rate = 3e-4;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  AugPolicy augment;
  AdamHyper adam;
  std::size_t checkpoint_every = 0;  // epochs between periodic checkpoints; 0 = off

  void validate() const {
    if (epochs < 1) throw InputError("train: epochs must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InputError("train: learning_rate must be > 0");
    if (batch_size < 1) throw InputError("train: batch_size must be >= 1");
    augment.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"precision", to_string(c.precision)},
                     {"augment", c.augment},
                     {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
                     {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.precision = parse_precision(j.value("precision", to_string(d.precision)));
  c.augment = j.value("augment", d.augment);
  if (j.contains("adam")) {
    const auto& a = j["adam"];
    c.adam.beta1 = a.value("beta1", d.adam.beta1);
    c.adam.beta2 = a.value("beta2", d.adam.beta2);
    c.adam.eps = a.value("eps", d.adam.eps);
  }
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
}

// ---- Image sources ------------------------------------------------------------

/// Labeled images addressed by sample id.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual std::size_t label(std::size_t id) const = 0;
  virtual Image image(std::size_t id) const = 0;
};

class MemorySource : public ImageSource {
 public:
  MemorySource(std::vector<Image> images, std::vector<std::size_t> labels, std::size_t classes)
      : images_(std::move(images)), labels_(std::move(labels)), classes_(classes) {
    if (images_.size() != labels_.size()) throw InputError("MemorySource: image and label counts differ");
    for (auto l : labels_)
      if (l >= classes_) throw InputError("MemorySource: label out of range");
  }

  std::size_t size() const override { return images_.size(); }
  std::size_t num_classes() const override { return classes_; }
  std::size_t label(std::size_t id) const override { return labels_.at(id); }
  Image image(std::size_t id) const override { return images_.at(id); }

 private:
  std::vector<Image> images_;
  std::vector<std::size_t> labels_;
  std::size_t classes_;
};

/// Reads netpbm files from a DatasetIndex on demand. Decoded images are cached
/// after resizing to `cache_size` (0 disables the cache) since every epoch
/// starts from the resized image anyway.
class IndexSource : public ImageSource {
 public:
  explicit IndexSource(DatasetIndex index, std::size_t cache_size = 0)
      : index_(std::move(index)), cache_size_(cache_size), cache_(index_.size()) {}

  std::size_t size() const override { return index_.size(); }
  std::size_t num_classes() const override { return index_.num_classes(); }
  std::size_t label(std::size_t id) const override { return index_.samples.at(id).label; }
  Image image(std::size_t id) const override {
    if (cache_size_ == 0) return read_netpbm(index_.samples.at(id).path);
    auto& slot = cache_.at(id);
    if (!slot) slot = resize_bilinear(read_netpbm(index_.samples[id].path), cache_size_, cache_size_);
    return *slot;
  }
  const DatasetIndex& index() const { return index_; }

 private:
  DatasetIndex index_;
  std::size_t cache_size_;
  mutable std::vector<std::optional<Image>> cache_;
};

// ---- Model -----------------------------------------------------------------------

template <typename T>
struct Model {
  ViTConfig config;
  ViTParams<T> params;
  std::vector<std::string> class_names;

  static Model initialize(const ViTConfig& cfg, std::uint64_t seed, std::vector<std::string> names = {}) {
    cfg.validate();
    Rng rng(seed);
    return Model{cfg, init_params<T>(cfg, rng), std::move(names)};
  }

  static Model from_checkpoint(const Checkpoint& ck) {
    return Model{ck.config, ck.params.template cast<T>(), ck.class_names};
  }

  void save(const std::filesystem::path& path) const { save_checkpoint(params, config, path, class_names); }
};

/// Resize to the model input and normalize.
template <typename T>
Tensor<T> preprocess(const Image& img, const ViTConfig& cfg, const AugPolicy& policy) {
  return normalize<T>(resize_bilinear(img, cfg.image_size, cfg.image_size), policy);
}

template <typename T>
Tensor<T> predict_logits(const Model<T>& m, const Image& img, const AugPolicy& policy) {
  return forward(preprocess<T>(img, m.config, policy), m.params, m.config, Mode::infer);
}

template <typename T>
std::size_t predict(const Model<T>& m, const Image& img, const AugPolicy& policy) {
  const auto logits = predict_logits(m, img, policy);
  return ops::argmax(std::span<const T>(logits.data()));
}

inline void check_class_count(const ViTConfig& cfg, const ImageSource& src, const std::string& context) {
  if (cfg.num_classes != src.num_classes()) throw ClassCountMismatchError(cfg.num_classes, src.num_classes(), context);
}

// ---- Training --------------------------------------------------------------------

struct EpochStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::size_t batches = 0;
  std::vector<std::size_t> batch_sizes;
};

/// One pass over `ids`: shuffle with `rng`, cut into batches of batch_size
/// (the last may be short), and take one Adam step per batch on the mean
/// cross-entropy. Sample k of the shuffled order is augmented (and draws its
/// dropout masks) from rng.substream(k). Loss and accuracy are measured on
/// the augmented train-mode forward passes.
template <typename T>
EpochStats train_epoch(Model<T>& model, AdamState<T>& state, const ImageSource& src, std::vector<std::size_t> ids,
                       const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  check_class_count(model.config, src, "train_epoch");
  if (ids.empty()) throw InputError("train_epoch: empty training partition");
  AugPolicy policy = cfg.augment;
  policy.image_size = model.config.image_size;
  rng.shuffle(ids.begin(), ids.end());

  EpochStats stats;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  const std::size_t k = model.config.num_classes;
  for (std::size_t start = 0; start < ids.size(); start += cfg.batch_size) {
    const std::size_t b = std::min(cfg.batch_size, ids.size() - start);
    std::vector<ForwardCache<T>> caches;
    caches.reserve(b);
    Tensor<T> logits({b, k});
    std::vector<std::size_t> labels(b);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t id = ids[start + i];
      Rng img_rng = rng.substream(start + i);
      const Image aug = augment_train(src.image(id), policy, img_rng);
      caches.push_back(forward_cached(normalize<T>(aug, policy), model.params, model.config, Mode::train, &img_rng));
      std::copy_n(caches.back().logits.data().begin(), k, logits.data().begin() + i * k);
      labels[i] = src.label(id);
      if (ops::argmax(std::span<const T>(caches.back().logits.data())) == labels[i]) ++correct;
    }
    const auto ce = cross_entropy(logits, std::span<const std::size_t>(labels));
    ViTParams<T> grads = model.params.zeros_like();
    for (std::size_t i = 0; i < b; ++i) {
      Tensor<T> dl({k});
      std::copy_n(ce.dlogits.data().begin() + i * k, k, dl.data().begin());
      backward_accumulate(caches[i], model.params, model.config, dl, grads);
    }
    adam_step(model.params, grads, state, cfg.learning_rate);
    loss_sum += static_cast<double>(ce.loss) * static_cast<double>(b);
    stats.batch_sizes.push_back(b);
  }
  stats.batches = stats.batch_sizes.size();
  stats.mean_loss = loss_sum / static_cast<double>(ids.size());
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(ids.size());
  return stats;
}

/// Predicted class per id, infer mode, no augmentation.
template <typename T>
std::vector<std::size_t> predict_ids(const Model<T>& model, const ImageSource& src, const std::vector<std::size_t>& ids,
                                     const AugPolicy& policy) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(predict(model, src.image(id), policy));
  return out;
}

template <typename T>
double accuracy_on(const Model<T>& model, const ImageSource& src, const std::vector<std::size_t>& ids,
                   const AugPolicy& policy) {
  if (ids.empty()) throw InputError("accuracy_on: no samples");
  const auto preds = predict_ids(model, src, ids, policy);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) correct += preds[i] == src.label(ids[i]);
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
};

template <typename T>
struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when there is no validation set
  double best_val_acc = 0.0;
  ViTParams<T> best_params;  // params after best_epoch; final params without val
};

/// Writes epoch,train_loss,train_acc[,val_acc]; the val column is present only
/// when every record has a value.
inline void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  const bool with_val = !history.empty() && std::all_of(history.begin(), history.end(),
                                                        [](const EpochRecord& r) { return r.val_acc.has_value(); });
  out << "epoch,train_loss,train_acc" << (with_val ? ",val_acc" : "") << '\n';
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g", r.epoch, r.train_loss, r.train_acc);
    out << buf;
    if (with_val) {
      std::snprintf(buf, sizeof buf, ",%.17g", *r.val_acc);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Runs cfg.epochs epochs. Epoch e (1-based) shuffles and augments from
/// Rng(cfg.seed).substream(e). With a non-empty `val_ids` the best-validation
/// params are kept (ties go to the earlier epoch). When `out_dir` is given,
/// writes last.vitc, best.vitc (if val) and every cadence epoch_NNN.vitc.
template <typename T>
FitResult<T> fit(Model<T>& model, const ImageSource& src, const std::vector<std::size_t>& train_ids,
                 const std::vector<std::size_t>& val_ids, const TrainConfig& cfg,
                 const std::optional<std::filesystem::path>& out_dir = std::nullopt, bool verbose = false) {
  cfg.validate();
  check_class_count(model.config, src, "fit");
  if (train_ids.empty()) throw InputError("fit: empty training partition");
  AugPolicy eval_policy = cfg.augment;
  eval_policy.image_size = model.config.image_size;

  auto state = AdamState<T>::for_params(model.params, cfg.adam);
  const Rng root(cfg.seed);
  FitResult<T> result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng = root.substream(epoch);
    EpochStats st;
    try {
      st = train_epoch(model, state, src, train_ids, cfg, rng);
    } catch (const NumericError& e) {
      throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(st.mean_loss)) throw TrainingError("epoch " + std::to_string(epoch) + ": loss diverged");
    EpochRecord rec{epoch, st.mean_loss, st.accuracy, std::nullopt};
    if (!val_ids.empty()) {
      rec.val_acc = accuracy_on(model, src, val_ids, eval_policy);
      if (result.best_epoch == 0 || *rec.val_acc > result.best_val_acc) {
        result.best_epoch = epoch;
        result.best_val_acc = *rec.val_acc;
        result.best_params = model.params;
      }
    }
    result.history.push_back(rec);
    if (verbose) {
      std::printf("epoch %zu/%zu loss %.6f train_acc %.4f", epoch, cfg.epochs, rec.train_loss, rec.train_acc);
      if (rec.val_acc) std::printf(" val_acc %.4f", *rec.val_acc);
      std::printf("\n");
      std::fflush(stdout);
    }
    if (out_dir) {
      try {
        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
          char name[32];
          std::snprintf(name, sizeof name, "epoch_%03zu.vitc", epoch);
          model.save(*out_dir / name);
        }
        if (result.best_epoch == epoch)
          save_checkpoint(result.best_params, model.config, *out_dir / "best.vitc", model.class_names);
      } catch (const IoError& e) {
        throw IoError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
  }
  if (val_ids.empty()) result.best_params = model.params;
  if (out_dir) {
    try {
      model.save(*out_dir / "last.vitc");
      write_history_csv(result.history, *out_dir / "history.csv");
    } catch (const IoError& e) {
      throw IoError(std::string("after training: ") + e.what());
    }
  }
  return result;
}

}  // namespace vitmat
