#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitmat/augment.hpp"
#include "vitmat/data.hpp"
#include "vitmat/errors.hpp"
#include "vitmat/image.hpp"
#include "vitmat/train.hpp"

namespace vitmat {

/// K x K counts; rows are the true class, columns the predicted class.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::size_t> counts;  // row-major

  explicit ConfusionMatrix(std::size_t classes = 0) : k(classes), counts(classes * classes, 0) {}

  std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * k + pred]; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  std::size_t row_sum(std::size_t r) const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < k; ++c) n += at(r, c);
    return n;
  }
  std::size_t col_sum(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t r = 0; r < k; ++r) n += at(r, c);
    return n;
  }
  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < k; ++i) n += at(i, i);
    return n;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
                                 std::size_t k) {
  if (preds.size() != labels.size())
    throw InputError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= k || labels[i] >= k)
      throw InputError("confusion: class id out of range at sample " + std::to_string(i) + " (K=" +
                       std::to_string(k) + ")");
    ++cm.at(labels[i], preds[i]);
  }
  return cm;
}

struct OvrCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  bool operator==(const OvrCounts&) const = default;
};

inline OvrCounts one_vs_rest_counts(const ConfusionMatrix& cm, std::size_t c) {
  if (c >= cm.k) throw InputError("one_vs_rest_counts: class " + std::to_string(c) + " out of range");
  OvrCounts o;
  o.tp = cm.at(c, c);
  o.fp = cm.col_sum(c) - o.tp;
  o.fn = cm.row_sum(c) - o.tp;
  o.tn = cm.total() - o.tp - o.fp - o.fn;
  return o;
}

/// Per-class scores. A ratio whose denominator is zero is reported as 0 and
/// flagged undefined.
struct ClassMetrics {
  OvrCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;  // one-vs-rest (TP + TN) / total
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;

  bool operator==(const ClassMetrics&) const = default;
};

inline ClassMetrics metrics(const OvrCounts& o) {
  ClassMetrics m;
  m.counts = o;
  const double tp = double(o.tp), fp = double(o.fp), fn = double(o.fn), tn = double(o.tn);
  if (o.tp + o.fp == 0) m.precision_undefined = true;
  else m.precision = tp / (tp + fp);
  if (o.tp + o.fn == 0) m.recall_undefined = true;
  else m.recall = tp / (tp + fn);
  if (m.precision + m.recall == 0.0) m.f1_undefined = true;
  else m.f1 = (2.0 * m.precision * m.recall) / (m.precision + m.recall);
  const std::size_t total = o.tp + o.fp + o.fn + o.tn;
  m.accuracy = total == 0 ? 0.0 : (tp + tn) / double(total);
  return m;
}

/// trace / total.
inline double overall_accuracy(const ConfusionMatrix& cm) {
  const std::size_t n = cm.total();
  if (n == 0) throw InputError("overall_accuracy: no evaluated samples");
  return double(cm.trace()) / double(n);
}

// ---- Fold aggregation -------------------------------------------------------------

struct FoldSummary {
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation

  bool operator==(const FoldSummary&) const = default;
};

inline FoldSummary summarize_folds(const std::vector<double>& accuracies) {
  if (accuracies.empty()) throw InputError("summarize_folds: no folds");
  FoldSummary s{accuracies, 0.0, 0.0};
  for (double a : accuracies) s.mean += a;
  s.mean /= double(accuracies.size());
  double ss = 0.0;
  for (double a : accuracies) ss += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(ss / double(accuracies.size()));
  return s;
}

/// Percent form "mean ± std": mean with up to two decimals (trailing zeros
/// dropped), std with one decimal. {1, 1, 1, 1, 1} -> "100 ± 0.0".
inline std::string format_mean_std(double mean, double std) {
  char m[64], s[64];
  std::snprintf(m, sizeof m, "%.2f", mean * 100.0);
  std::string ms = m;
  while (ms.back() == '0') ms.pop_back();
  if (ms.back() == '.') ms.pop_back();
  std::snprintf(s, sizeof s, "%.1f", std * 100.0);
  return ms + " ± " + s;
}

// ---- Report -----------------------------------------------------------------------

struct ReportMeta {
  std::string dataset;
  std::string checkpoint;
  std::uint64_t seed = 0;
  bool tta = false;
  std::size_t tta_count = 1;
  std::size_t tta_ties = 0;  // samples whose vote needed the tie rule

  bool operator==(const ReportMeta&) const = default;
};

struct EvalReport {
  std::vector<std::string> class_names;
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double overall_accuracy = 0.0;
  std::optional<FoldSummary> folds;
  ReportMeta meta;

  bool operator==(const EvalReport&) const = default;
};

/// Per-class metrics, unweighted macro means, and trace accuracy.
inline EvalReport make_report(const ConfusionMatrix& cm, std::vector<std::string> class_names, ReportMeta meta = {}) {
  if (class_names.empty())
    for (std::size_t c = 0; c < cm.k; ++c) class_names.push_back("class_" + std::to_string(c));
  if (class_names.size() != cm.k) throw InputError("make_report: class name count does not match the matrix");
  EvalReport r;
  r.class_names = std::move(class_names);
  r.confusion = cm;
  r.meta = std::move(meta);
  for (std::size_t c = 0; c < cm.k; ++c) {
    r.per_class.push_back(metrics(one_vs_rest_counts(cm, c)));
    r.macro_precision += r.per_class.back().precision;
    r.macro_recall += r.per_class.back().recall;
    r.macro_f1 += r.per_class.back().f1;
  }
  if (cm.k > 0) {
    r.macro_precision /= double(cm.k);
    r.macro_recall /= double(cm.k);
    r.macro_f1 /= double(cm.k);
  }
  r.overall_accuracy = overall_accuracy(cm);
  return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    nlohmann::json undefined = nlohmann::json::array();
    if (m.precision_undefined) undefined.push_back("precision");
    if (m.recall_undefined) undefined.push_back("recall");
    if (m.f1_undefined) undefined.push_back("f1");
    classes.push_back({{"name", r.class_names[c]},
                       {"tp", m.counts.tp},
                       {"fp", m.counts.fp},
                       {"fn", m.counts.fn},
                       {"tn", m.counts.tn},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"accuracy", m.accuracy},
                       {"undefined", undefined}});
  }
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < r.confusion.k; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < r.confusion.k; ++p) row.push_back(r.confusion.at(t, p));
    rows.push_back(row);
  }
  nlohmann::json j = {{"classes", classes},
                      {"confusion", rows},
                      {"macro", {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}}},
                      {"overall_accuracy", r.overall_accuracy},
                      {"meta",
                       {{"dataset", r.meta.dataset},
                        {"checkpoint", r.meta.checkpoint},
                        {"seed", r.meta.seed},
                        {"tta", r.meta.tta},
                        {"tta_count", r.meta.tta_count},
                        {"tta_ties", r.meta.tta_ties}}}};
  if (r.folds) {
    j["folds"] = {{"accuracies", r.folds->accuracies},
                  {"mean", r.folds->mean},
                  {"std", r.folds->std},
                  {"summary", format_mean_std(r.folds->mean, r.folds->std)}};
  }
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    const auto& rows = j.at("confusion");
    r.confusion = ConfusionMatrix(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t].size() != rows.size()) throw InputError("report: confusion matrix is not square");
      for (std::size_t p = 0; p < rows.size(); ++p) r.confusion.at(t, p) = rows[t][p].get<std::size_t>();
    }
    for (const auto& c : j.at("classes")) {
      ClassMetrics m;
      m.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("fn").get<std::size_t>(),
                  c.at("tn").get<std::size_t>()};
      m.precision = c.at("precision").get<double>();
      m.recall = c.at("recall").get<double>();
      m.f1 = c.at("f1").get<double>();
      m.accuracy = c.at("accuracy").get<double>();
      for (const auto& u : c.at("undefined")) {
        const auto s = u.get<std::string>();
        m.precision_undefined |= s == "precision";
        m.recall_undefined |= s == "recall";
        m.f1_undefined |= s == "f1";
      }
      r.class_names.push_back(c.at("name").get<std::string>());
      r.per_class.push_back(m);
    }
    r.macro_precision = j.at("macro").at("precision").get<double>();
    r.macro_recall = j.at("macro").at("recall").get<double>();
    r.macro_f1 = j.at("macro").at("f1").get<double>();
    r.overall_accuracy = j.at("overall_accuracy").get<double>();
    const auto& meta = j.at("meta");
    r.meta = {meta.at("dataset").get<std::string>(),  meta.at("checkpoint").get<std::string>(),
              meta.at("seed").get<std::uint64_t>(),   meta.at("tta").get<bool>(),
              meta.at("tta_count").get<std::size_t>(), meta.at("tta_ties").get<std::size_t>()};
    if (j.contains("folds")) {
      const auto& f = j["folds"];
      r.folds = FoldSummary{f.at("accuracies").get<std::vector<double>>(), f.at("mean").get<double>(),
                            f.at("std").get<double>()};
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed report JSON: ") + e.what());
  }
}

/// Columns: class,precision,recall,f1,accuracy,tp,fp,fn,tn,support. One row
/// per class, then "macro" (precision/recall/f1 only) and "overall"
/// (accuracy and support only).
inline void write_report_csv(const EvalReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "class,precision,recall,f1,accuracy,tp,fp,fn,tn,support\n";
  char buf[256];
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%zu,%zu,%zu,%zu,%zu\n", r.class_names[c].c_str(),
                  m.precision, m.recall, m.f1, m.accuracy, m.counts.tp, m.counts.fp, m.counts.fn, m.counts.tn,
                  m.counts.tp + m.counts.fn);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "macro,%.17g,%.17g,%.17g,,,,,,\n", r.macro_precision, r.macro_recall, r.macro_f1);
  out << buf;
  std::snprintf(buf, sizeof buf, "overall,,,,%.17g,,,,,%zu\n", r.overall_accuracy, r.confusion.total());
  out << buf;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Heatmap pixel (t, p) = round(255 * count / row total), so each row is
/// scaled by its own support and a perfect diagonal is all 255. Empty rows
/// are black.
inline std::vector<std::uint8_t> confusion_heatmap(const ConfusionMatrix& cm) {
  std::vector<std::uint8_t> px(cm.k * cm.k, 0);
  for (std::size_t t = 0; t < cm.k; ++t) {
    const std::size_t row = cm.row_sum(t);
    if (row == 0) continue;
    for (std::size_t p = 0; p < cm.k; ++p)
      px[t * cm.k + p] = static_cast<std::uint8_t>(std::lround(255.0 * double(cm.at(t, p)) / double(row)));
  }
  return px;
}

/// Writes the K x K heatmap as PGM and the raw counts as CSV (header row and
/// first column hold class names).
inline void render_confusion(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                             const std::filesystem::path& pgm_path, const std::filesystem::path& csv_path) {
  if (cm.k == 0) throw InputError("render_confusion: empty matrix");
  write_pgm(confusion_heatmap(cm), cm.k, cm.k, pgm_path);
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write '" + csv_path.string() + "'");
  out << "true\\pred";
  for (std::size_t p = 0; p < cm.k; ++p) out << ',' << (p < class_names.size() ? class_names[p] : std::to_string(p));
  out << '\n';
  for (std::size_t t = 0; t < cm.k; ++t) {
    out << (t < class_names.size() ? class_names[t] : std::to_string(t));
    for (std::size_t p = 0; p < cm.k; ++p) out << ',' << cm.at(t, p);
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + csv_path.string() + "'");
}

/// <stem>.json, <stem>.csv, <stem>_confusion.pgm and <stem>_confusion.csv under `dir`.
inline void emit_report(const EvalReport& r, const std::filesystem::path& dir, const std::string& stem = "report") {
  write_json_file(report_to_json(r), dir / (stem + ".json"));
  write_report_csv(r, dir / (stem + ".csv"));
  render_confusion(r.confusion, r.class_names, dir / (stem + "_confusion.pgm"), dir / (stem + "_confusion.csv"));
}

// ---- Test-time augmentation --------------------------------------------------------

inline constexpr std::size_t kDefaultTtaCount = 5;

struct VoteResult {
  std::size_t label = 0;
  std::vector<std::size_t> votes;  // per class
  bool tie = false;                // several classes shared the top count
};

/// Most votes wins; a tie goes to the lowest class id and sets `tie`.
inline VoteResult majority_vote(const std::vector<std::size_t>& predictions, std::size_t k) {
  if (predictions.empty()) throw InputError("majority_vote: no votes");
  VoteResult v;
  v.votes.assign(k, 0);
  for (auto p : predictions) {
    if (p >= k) throw InputError("majority_vote: class id out of range");
    ++v.votes[p];
  }
  v.label = static_cast<std::size_t>(std::max_element(v.votes.begin(), v.votes.end()) - v.votes.begin());
  v.tie = std::count(v.votes.begin(), v.votes.end(), v.votes[v.label]) > 1;
  return v;
}

/// Infer-mode argmax on each of tta_variants(img, ...), then majority_vote.
template <typename T>
VoteResult tta_predict(const Model<T>& model, const Image& img, const AugPolicy& policy, std::size_t count,
                       const Rng& rng) {
  AugPolicy p = policy;
  p.image_size = model.config.image_size;
  std::vector<std::size_t> preds;
  for (const auto& v : tta_variants(img, p, rng, count)) {
    const auto logits = forward(normalize<T>(v, p), model.params, model.config, Mode::infer);
    preds.push_back(ops::argmax(std::span<const T>(logits.data())));
  }
  return majority_vote(preds, model.config.num_classes);
}

/// Evaluates `ids`; with tta_count > 1 every sample goes through tta_predict
/// using rng substream = sample id.
template <typename T>
EvalReport evaluate(const Model<T>& model, const ImageSource& src, const std::vector<std::size_t>& ids,
                    const AugPolicy& policy, std::size_t tta_count = 1, std::uint64_t seed = 0,
                    ReportMeta meta = {}) {
  check_class_count(model.config, src, "evaluate");
  if (ids.empty()) throw InputError("evaluate: no samples to evaluate");
  if (tta_count == 0) throw InputError("evaluate: tta count must be >= 1");
  AugPolicy p = policy;
  p.image_size = model.config.image_size;
  std::vector<std::size_t> preds, labels;
  const Rng root(seed);
  for (auto id : ids) {
    const Image img = src.image(id);
    if (tta_count == 1) {
      preds.push_back(predict(model, img, p));
    } else {
      const auto v = tta_predict(model, img, p, tta_count, root.substream(id));
      preds.push_back(v.label);
      meta.tta_ties += v.tie;
    }
    labels.push_back(src.label(id));
  }
  meta.seed = seed;
  meta.tta = tta_count > 1;
  meta.tta_count = tta_count;
  return make_report(confusion(preds, labels, model.config.num_classes), model.class_names, meta);
}

// ---- Cross-validation ------------------------------------------------------------------

template <typename T>
struct CvResult {
  std::vector<EvalReport> fold_reports;
  FoldSummary summary;
};

/// For each fold f: fresh init from substream f of the training seed, train on
/// the other folds, evaluate on fold f. Errors are re-raised with the fold id.
template <typename T>
CvResult<T> cv_evaluate(const ViTConfig& model_cfg, const std::vector<std::string>& class_names,
                        const ImageSource& src, const FoldPlan& plan, const TrainConfig& cfg, bool verbose = false) {
  if (plan.k < 2) throw InputError("cv_evaluate: k must be >= 2");
  if (plan.assignment.size() != src.size()) throw InputError("cv_evaluate: fold plan does not match the dataset");
  CvResult<T> out;
  std::vector<double> accs;
  const Rng root(cfg.seed);
  for (std::size_t f = 0; f < plan.k; ++f) {
    const auto test = plan.test_ids(f), train = plan.train_ids(f);
    if (test.empty() || train.empty()) throw InputError("cv_evaluate: fold " + std::to_string(f) + " is empty");
    try {
      auto model = Model<T>::initialize(model_cfg, root.substream(f).next_u64(), class_names);
      fit(model, src, train, {}, cfg, std::nullopt, verbose);
      ReportMeta meta;
      meta.dataset = "fold " + std::to_string(f);
      auto rep = evaluate(model, src, test, cfg.augment, 1, cfg.seed, meta);
      accs.push_back(rep.overall_accuracy);
      out.fold_reports.push_back(std::move(rep));
    } catch (const TrainingError& e) {
      throw TrainingError("fold " + std::to_string(f) + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError("fold " + std::to_string(f) + ": " + e.what());
    }
  }
  out.summary = summarize_folds(accs);
  return out;
}

}  // namespace vitmat
