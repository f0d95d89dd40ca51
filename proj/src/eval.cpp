#include "aspm/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "aspm/rng.hpp"
#include "aspm/synth.hpp"

namespace aspm {

namespace {

// Deterministic regardless of thread schedule: every job is self-seeded.
void parallel_for(unsigned jobs, std::size_t n, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1u, jobs);
  if (n == 0) return;
  if (jobs == 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  const unsigned count = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
  threads.reserve(count);
  for (unsigned t = 0; t < count; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

PeriodSet concat_sets(const std::vector<PeriodSet>& sets, std::size_t skip) {
  PeriodSet out;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (i == skip) continue;
    out.periods.insert(out.periods.end(), sets[i].periods.begin(), sets[i].periods.end());
  }
  return out;
}

MetricSet evaluate_preds(const std::vector<int>& labels, const std::vector<int>& preds) {
  return metrics(confusion(labels, preds));
}

std::vector<int> labels_of(const PeriodSet& s) {
  std::vector<int> y(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    y[i] = s.periods[i].label == PeriodLabel::apneic ? 1 : 0;
  return y;
}

struct TrainSplit {
  LabeledData train;
  LabeledData val;
};

// D7: the validation set is the last 30% of the (fold-ordered) training
// split. Concatenated auxiliary data is appended to the train part only.
TrainSplit carve_validation(const LabeledData& all, double fraction) {
  const std::size_t n = all.size();
  const auto n_val = static_cast<std::size_t>(static_cast<double>(n) * fraction);
  if (n_val == 0 || n_val >= n)
    throw std::invalid_argument("training split too small for the validation fraction");
  return {slice_rows(all, 0, n - n_val), slice_rows(all, n - n_val, n)};
}

struct MetricAccessor {
  double MetricSet::*field;
};

constexpr MetricAccessor kMetricFields[] = {
    {&MetricSet::kappa},       {&MetricSet::accuracy}, {&MetricSet::sensitivity},
    {&MetricSet::specificity}, {&MetricSet::ppv},
};

void summarize(const std::vector<MetricSet>& per_fold, MetricSet& mean_out, MetricSet& sd_out) {
  for (const auto& acc : kMetricFields) {
    std::vector<double> vals(per_fold.size());
    for (std::size_t i = 0; i < per_fold.size(); ++i) vals[i] = per_fold[i].*acc.field;
    mean_out.*acc.field = mean(vals);
    sd_out.*acc.field = sample_sd(vals);
  }
}

}  // namespace

PeriodSet balance_majority_subsample(const PeriodSet& periods, std::uint64_t seed) {
  const std::size_t n_apneic = periods.count(PeriodLabel::apneic);
  const std::size_t n_normal = periods.size() - n_apneic;
  if (n_apneic == 0 || n_normal == 0)
    throw std::invalid_argument("balance_majority_subsample: need both classes");
  if (n_apneic == n_normal) return periods;

  const PeriodLabel majority = n_normal > n_apneic ? PeriodLabel::normal : PeriodLabel::apneic;
  const std::size_t keep = std::min(n_apneic, n_normal);

  std::vector<std::size_t> major_idx;
  major_idx.reserve(std::max(n_apneic, n_normal));
  for (std::size_t i = 0; i < periods.size(); ++i)
    if (periods.periods[i].label == majority) major_idx.push_back(i);

  // Partial Fisher-Yates, then restore original order among the kept.
  Rng rng(mix_seed(seed, 0xBA7A));
  for (std::size_t j = 0; j < keep; ++j)
    std::swap(major_idx[j], major_idx[j + rng.below(major_idx.size() - j)]);
  major_idx.resize(keep);
  std::sort(major_idx.begin(), major_idx.end());

  PeriodSet out;
  out.periods.reserve(2 * keep);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < periods.size(); ++i) {
    const Period& p = periods.periods[i];
    if (p.label != majority) {
      out.periods.push_back(p);
    } else {
      while (cursor < major_idx.size() && major_idx[cursor] < i) ++cursor;
      if (cursor < major_idx.size() && major_idx[cursor] == i) out.periods.push_back(p);
    }
  }
  return out;
}

std::vector<PeriodSet> build_folds(const PeriodSet& periods, std::size_t k) {
  if (k == 0 || periods.size() < k)
    throw std::invalid_argument("build_folds: need at least k periods");
  const std::size_t fold_size = periods.size() / k;
  std::vector<PeriodSet> folds(k);
  for (std::size_t i = 0; i < k; ++i) {
    folds[i].periods.assign(periods.periods.begin() + static_cast<std::ptrdiff_t>(i * fold_size),
                            periods.periods.begin() + static_cast<std::ptrdiff_t>((i + 1) * fold_size));
  }
  return folds;
}

KfoldResult run_kfold(const PeriodSet& periods, ModelFamily family, ModelSize size,
                      const TrainConfig& cfg, const KfoldOptions& opt) {
  if (opt.folds < 2) throw std::invalid_argument("run_kfold: need at least 2 folds");
  if (opt.mixed != MixedMode::none) {
    if (family == ModelFamily::rf)
      throw std::invalid_argument("run_kfold: mixed training applies to nn families only");
    if (opt.aux == nullptr)
      throw std::invalid_argument("run_kfold: mixed mode requires the high-quality set");
    if (!(opt.mixed_weight >= 0.0))
      throw std::invalid_argument("run_kfold: mixed weight must be >= 0");
  }

  const std::vector<PeriodSet> folds = build_folds(periods, opt.folds);
  std::vector<PeriodSet> aux_folds;
  if (opt.mixed == MixedMode::pretrain_high_then_finetune)
    aux_folds = build_folds(*opt.aux, opt.folds);

  KfoldResult result;
  result.fold_metrics.resize(opt.folds);
  result.fold_train_loss.resize(opt.folds);
  result.fold_val_kappa.resize(opt.folds);
  if (family != ModelFamily::rf) result.fold_params.resize(opt.folds);

  parallel_for(opt.jobs, opt.folds, [&](std::size_t i) {
    PeriodSet train_set = concat_sets(folds, i);
    if (opt.balance)
      train_set = balance_majority_subsample(train_set, mix_seed(opt.seed, 0xBA10 + i));

    const PeriodSet& test_set = folds[i];
    const std::vector<int> test_labels = labels_of(test_set);
    const LabeledData test_data = to_labeled(test_set);

    if (family == ModelFamily::rf) {
      const Forest forest =
          rf_fit(to_labeled(train_set), forest_spec(size), mix_seed(opt.seed, 0xF07 + i));
      const std::vector<int> preds = argmax_rows(rf_predict_proba_batch(forest, test_data.x));
      result.fold_metrics[i] = evaluate_preds(test_labels, preds);
      return;
    }

    const ModelSpec spec = build_spec(family, size);
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = mix_seed(cfg.seed, 0xC0DE + i);

    TrainSplit split = carve_validation(to_labeled(train_set), fold_cfg.validation_fraction);
    TrainReport report;

    switch (opt.mixed) {
      case MixedMode::none:
        report = train(spec, split.train, split.val, fold_cfg);
        break;
      case MixedMode::concat_matched:
      case MixedMode::concat_full: {
        PeriodSet aux_set = *opt.aux;
        if (opt.balance)
          aux_set = balance_majority_subsample(aux_set, mix_seed(opt.seed, 0xAB10 + i));
        append(split.train, to_labeled(aux_set, opt.mixed_weight));
        report = train(spec, split.train, split.val, fold_cfg);
        break;
      }
      case MixedMode::pretrain_high_then_finetune: {
        PeriodSet aux_train = concat_sets(aux_folds, i);
        if (opt.balance)
          aux_train = balance_majority_subsample(aux_train, mix_seed(opt.seed, 0xAB10 + i));
        TrainSplit pre_split =
            carve_validation(to_labeled(aux_train, opt.mixed_weight), fold_cfg.validation_fraction);
        const TrainReport pre_report = train(spec, pre_split.train, pre_split.val, fold_cfg);
        if (opt.finetune_epochs == 0) {
          report = pre_report;
        } else {
          TrainConfig ft_cfg = fold_cfg;
          if (opt.finetune_epochs > 0) ft_cfg.epochs = static_cast<std::size_t>(opt.finetune_epochs);
          report = train_from(spec, pre_report.best_params, split.train, split.val, ft_cfg);
        }
        break;
      }
    }

    const std::vector<int> preds =
        argmax_rows(predict_proba(spec, report.best_params, test_data.x, cfg.batch_size));
    result.fold_metrics[i] = evaluate_preds(test_labels, preds);
    result.fold_train_loss[i] = report.train_loss;
    result.fold_val_kappa[i] = report.val_kappa;
    result.fold_params[i] = std::move(report.best_params);
  });

  summarize(result.fold_metrics, result.mean, result.sd);
  return result;
}

const char* to_string(LosoVariant v) {
  switch (v) {
    case LosoVariant::balanced: return "balanced";
    case LosoVariant::imbalanced: return "imbalanced";
    case LosoVariant::combined: return "combined";
  }
  return "?";
}

namespace {

struct SubjectEval {
  bool skipped = false;
  std::string warning;
  SubjectResult result_b, result_i, result_c;
  MetricSet metrics_b, metrics_i, metrics_c;
};

SubjectResult make_result(const SubjectData& subject, std::size_t pred_count) {
  const double n = static_cast<double>(subject.periods.size());
  const double hours = n * static_cast<double>(kPeriodSeconds) / 3600.0;
  SubjectResult r;
  r.subject_id = subject.subject_id;
  r.actual_ahi = subject.scored_events / hours;
  r.predicted_ahi = static_cast<double>(pred_count) / hours;
  r.actual_severity = severity_class(r.actual_ahi);
  r.predicted_severity = severity_class(r.predicted_ahi);
  return r;
}

std::vector<int> threshold_probs(const Tensor& probs) {
  std::vector<int> preds(probs.shape[0]);
  for (std::size_t i = 0; i < preds.size(); ++i)
    preds[i] = probs.data[i * 2 + 1] >= 0.5 ? 1 : 0;
  return preds;
}

}  // namespace

LosoAllResult run_loso_all(const std::vector<SubjectData>& subjects, ModelFamily family,
                           ModelSize size, const TrainConfig& cfg, std::uint64_t seed,
                           unsigned jobs) {
  if (subjects.size() < 2) throw std::invalid_argument("run_loso: need at least 2 subjects");
  for (std::size_t i = 0; i < subjects.size(); ++i)
    for (std::size_t j = i + 1; j < subjects.size(); ++j)
      if (subjects[i].subject_id == subjects[j].subject_id)
        throw std::invalid_argument("run_loso: duplicate subject id " + subjects[i].subject_id);

  std::vector<SubjectEval> evals(subjects.size());

  parallel_for(jobs, subjects.size(), [&](std::size_t s) {
    SubjectEval& ev = evals[s];
    const SubjectData& held = subjects[s];
    if (held.periods.size() == 0) {
      ev.skipped = true;
      ev.warning = "subject " + held.subject_id + " skipped: less than 60 s of data";
      return;
    }

    PeriodSet train_raw;
    for (std::size_t j = 0; j < subjects.size(); ++j) {
      if (j == s) continue;
      train_raw.periods.insert(train_raw.periods.end(), subjects[j].periods.periods.begin(),
                               subjects[j].periods.periods.end());
    }
    for (const Period& p : train_raw.periods)
      if (p.subject_id == held.subject_id)
        throw std::logic_error("run_loso: test subject leaked into the training set");

    const PeriodSet train_bal =
        balance_majority_subsample(train_raw, mix_seed(seed, 0x3000 + s));

    const LabeledData test_data = to_labeled(held.periods);
    const std::vector<int> test_labels = labels_of(held.periods);

    Tensor probs_i, probs_b;
    if (family == ModelFamily::rf) {
      const Forest forest_i =
          rf_fit(to_labeled(train_raw), forest_spec(size), mix_seed(seed, 0x1000 + s));
      const Forest forest_b =
          rf_fit(to_labeled(train_bal), forest_spec(size), mix_seed(seed, 0x2000 + s));
      probs_i = rf_predict_proba_batch(forest_i, test_data.x);
      probs_b = rf_predict_proba_batch(forest_b, test_data.x);
    } else {
      const ModelSpec spec = build_spec(family, size);
      TrainConfig cfg_i = cfg;
      cfg_i.seed = mix_seed(seed, 0x1000 + s);
      TrainSplit split_i = carve_validation(to_labeled(train_raw), cfg.validation_fraction);
      const TrainReport rep_i = train(spec, split_i.train, split_i.val, cfg_i);
      probs_i = predict_proba(spec, rep_i.best_params, test_data.x, cfg.batch_size);

      TrainConfig cfg_b = cfg;
      cfg_b.seed = mix_seed(seed, 0x2000 + s);
      TrainSplit split_b = carve_validation(to_labeled(train_bal), cfg.validation_fraction);
      const TrainReport rep_b = train(spec, split_b.train, split_b.val, cfg_b);
      probs_b = predict_proba(spec, rep_b.best_params, test_data.x, cfg.batch_size);
    }

    Tensor probs_c = probs_i;
    for (std::size_t k = 0; k < probs_c.size(); ++k)
      probs_c.data[k] = 0.5 * (probs_i.data[k] + probs_b.data[k]);

    const std::vector<int> preds_i = threshold_probs(probs_i);
    const std::vector<int> preds_b = threshold_probs(probs_b);
    const std::vector<int> preds_c = threshold_probs(probs_c);

    auto count_pos = [](const std::vector<int>& v) {
      return static_cast<std::size_t>(std::count(v.begin(), v.end(), 1));
    };
    ev.result_i = make_result(held, count_pos(preds_i));
    ev.result_b = make_result(held, count_pos(preds_b));
    ev.result_c = make_result(held, count_pos(preds_c));
    ev.metrics_i = evaluate_preds(test_labels, preds_i);
    ev.metrics_b = evaluate_preds(test_labels, preds_b);
    ev.metrics_c = evaluate_preds(test_labels, preds_c);
  });

  LosoAllResult all;
  for (const SubjectEval& ev : evals) {
    if (ev.skipped) {
      all.warnings.push_back(ev.warning);
      continue;
    }
    all.balanced.subjects.push_back(ev.result_b);
    all.balanced.per_subject_metrics.push_back(ev.metrics_b);
    all.imbalanced.subjects.push_back(ev.result_i);
    all.imbalanced.per_subject_metrics.push_back(ev.metrics_i);
    all.combined.subjects.push_back(ev.result_c);
    all.combined.per_subject_metrics.push_back(ev.metrics_c);
  }
  all.balanced.warnings = all.warnings;
  all.imbalanced.warnings = all.warnings;
  all.combined.warnings = all.warnings;
  return all;
}

LosoResult run_loso(const std::vector<SubjectData>& subjects, ModelFamily family, ModelSize size,
                    const TrainConfig& cfg, LosoVariant variant, std::uint64_t seed,
                    unsigned jobs) {
  // The combined variant needs both classifiers anyway; for the single
  // variants this trains one extra model per subject only when family is rf
  // (cheap). For nn families both are trained too; callers that care use
  // run_loso_all and pick.
  LosoAllResult all = run_loso_all(subjects, family, size, cfg, seed, jobs);
  switch (variant) {
    case LosoVariant::balanced: return std::move(all.balanced);
    case LosoVariant::imbalanced: return std::move(all.imbalanced);
    case LosoVariant::combined: return std::move(all.combined);
  }
  throw std::invalid_argument("run_loso: bad variant");
}

std::vector<ThresholdRow> threshold_table(std::span<const SubjectResult> subjects,
                                          const std::vector<double>& thresholds) {
  if (subjects.empty()) throw std::invalid_argument("threshold_table: no subjects");
  std::vector<ThresholdRow> rows;
  rows.reserve(thresholds.size());
  const double n = static_cast<double>(subjects.size());
  for (double th : thresholds) {
    ThresholdRow row;
    row.threshold = th;
    std::vector<int> labels(subjects.size()), preds(subjects.size());
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      labels[i] = subjects[i].actual_ahi >= th ? 1 : 0;
      preds[i] = subjects[i].predicted_ahi >= th ? 1 : 0;
      row.actual_above += static_cast<std::size_t>(labels[i]);
      row.predicted_above += static_cast<std::size_t>(preds[i]);
    }
    row.actual_below = subjects.size() - row.actual_above;
    row.predicted_below = subjects.size() - row.predicted_above;
    row.metrics = metrics(confusion(labels, preds));
    row.p_a = static_cast<double>(row.actual_above) / n;
    row.p_a_given_p = bayes_posterior(row.p_a, row.metrics.sensitivity,
                                      static_cast<double>(row.predicted_above) / n);
    rows.push_back(row);
  }
  return rows;
}

SeverityConfusion severity_confusion(std::span<const SubjectResult> subjects) {
  SeverityConfusion counts{};
  for (const SubjectResult& s : subjects)
    counts[static_cast<std::size_t>(s.actual_severity)]
          [static_cast<std::size_t>(s.predicted_severity)] += 1;
  return counts;
}

std::vector<SubjectData> build_subjects(const std::vector<Recording>& recs,
                                        const std::vector<EventAnnotation>& anns,
                                        const PipelineOptions& opt) {
  const std::vector<std::size_t> kept = filter_artifact_recordings(recs, anns, opt.artifact_threshold);

  std::vector<SubjectData> subjects;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t idx : kept) {
    const Recording& rec = recs[idx];
    const EventAnnotation& ann = anns[idx];

    UniformSeries series = standardize(resample_1hz(rec));
    if (series.values.size() < kPeriodSeconds) continue;  // no full period anyway
    if (opt.bla) series = baseline_adjust(series);
    PeriodSet periods = segment_periods(series, ann);

    auto [it, inserted] = index.try_emplace(rec.subject_id, subjects.size());
    if (inserted) {
      subjects.emplace_back();
      subjects.back().subject_id = rec.subject_id;
    }
    SubjectData& subject = subjects[it->second];
    subject.periods.periods.insert(subject.periods.periods.end(), periods.periods.begin(),
                                   periods.periods.end());
    for (const ScoredEvent& e : ann.events)
      if (e.kind != EventKind::artifact) subject.scored_events += 1.0;
  }
  return subjects;
}

PeriodSet concat_periods(const std::vector<SubjectData>& subjects) {
  PeriodSet out;
  for (const SubjectData& s : subjects)
    out.periods.insert(out.periods.end(), s.periods.periods.begin(), s.periods.periods.end());
  return out;
}

std::vector<std::pair<Recording, EventAnnotation>> generate_population(
    const PopulationConfig& cfg, bool clean) {
  std::vector<std::pair<Recording, EventAnnotation>> out;
  out.reserve(cfg.subjects);
  for (std::size_t i = 0; i < cfg.subjects; ++i) {
    const double frac =
        cfg.subjects < 2 ? 0.0 : static_cast<double>(i) / static_cast<double>(cfg.subjects - 1);
    SynthConfig sc;
    sc.subject_id = "s" + std::to_string(i);
    sc.recording_id = sc.subject_id + (clean ? "_hq" : "_lq");
    sc.device = clean ? Device::high_quality : Device::low_quality;
    sc.duration_s = cfg.duration_h * 3600.0;
    sc.breath_rate_hz = cfg.breath_rate_hz;
    sc.breath_amplitude = cfg.breath_amplitude;
    sc.apnea_rate_per_hour = cfg.ahi_min + frac * (cfg.ahi_max - cfg.ahi_min);
    sc.event_min_s = cfg.event_min_s;
    sc.event_max_s = cfg.event_max_s;
    sc.hypopnea_fraction = cfg.hypopnea_fraction;
    sc.sample_rate_hz = cfg.sample_rate_hz;
    if (!clean) {
      sc.noise_sd = cfg.noise_sd;
      sc.drift_sd = cfg.drift_sd;
      sc.shift_probability = cfg.shift_probability;
      sc.jitter_sd_s = cfg.jitter_sd_s;
    }
    sc.seed = mix_seed(cfg.seed, 0x5EED + i);
    out.push_back(generate(sc));
  }
  return out;
}

}  // namespace aspm
