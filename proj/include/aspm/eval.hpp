#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aspm/metrics.hpp"
#include "aspm/models.hpp"
#include "aspm/nn.hpp"
#include "aspm/signal.hpp"

namespace aspm {

// Classes equalized by uniform majority sub-sampling without replacement;
// the minority class is untouched and relative order is preserved.
PeriodSet balance_majority_subsample(const PeriodSet& periods, std::uint64_t seed);

// Contiguous equal-sized folds in original order; the remainder at the end
// is discarded.
std::vector<PeriodSet> build_folds(const PeriodSet& periods, std::size_t k = 10);

enum class MixedMode : std::uint8_t {
  none,
  pretrain_high_then_finetune,  // sequential: high-quality first, then target data
  concat_matched,               // target training folds + the matched high-quality set
  concat_full,                  // target training folds + the full high-quality set
};

struct KfoldOptions {
  std::size_t folds = 10;
  bool balance = false;
  MixedMode mixed = MixedMode::none;
  double mixed_weight = 1.0;       // loss weight w on high-quality samples
  const PeriodSet* aux = nullptr;  // high-quality data, required for mixed modes
  // Fine-tune epoch count for pretrain_high_then_finetune; -1 = cfg.epochs,
  // 0 = evaluate the pretrained snapshot as-is on the target folds.
  long finetune_epochs = -1;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

struct KfoldResult {
  std::vector<MetricSet> fold_metrics;
  std::vector<std::vector<double>> fold_train_loss;
  std::vector<std::vector<double>> fold_val_kappa;
  std::vector<ModelParams> fold_params;  // best snapshot per fold (nn families only)
  MetricSet mean;
  MetricSet sd;
};

// Cross-validation without pre-shuffling: per fold, train on the remaining
// folds (balanced on request) with the last 30% of the training split as the
// validation set, keep the best-validation-kappa snapshot, score the held-out
// fold. Mixed modes mirror the sequential / concatenated training protocols;
// concatenated high-quality data joins the training part only (never the
// validation split) so w = 0 reproduces the unmixed run exactly.
KfoldResult run_kfold(const PeriodSet& periods, ModelFamily family, ModelSize size,
                      const TrainConfig& cfg, const KfoldOptions& opt);

// --- per-subject severity estimation -----------------------------------------

struct SubjectData {
  std::string subject_id;
  PeriodSet periods;           // all retained periods of the subject
  double scored_events = 0.0;  // apnea+hypopnea count over the retained recordings
};

struct SubjectResult {
  std::string subject_id;
  double actual_ahi = 0.0;
  double predicted_ahi = 0.0;
  Severity actual_severity = Severity::normal;
  Severity predicted_severity = Severity::normal;
};

enum class LosoVariant : std::uint8_t { balanced, imbalanced, combined };

const char* to_string(LosoVariant v);

struct LosoResult {
  std::vector<SubjectResult> subjects;
  std::vector<MetricSet> per_subject_metrics;  // period-level, per subject
  std::vector<std::string> warnings;
};

struct LosoAllResult {
  LosoResult balanced, imbalanced, combined;
  std::vector<std::string> warnings;
};

// Leave-one-subject-out: for each subject, train on everyone else's periods
// (majority-subsampled for the balanced classifier, as-is for the imbalanced
// one; the combined variant averages their class probabilities before the
// 0.5 threshold). Predicted AHI = predicted apneic periods per hour of that
// subject's retained data. Subjects with no full period are skipped with a
// warning.
LosoResult run_loso(const std::vector<SubjectData>& subjects, ModelFamily family, ModelSize size,
                    const TrainConfig& cfg, LosoVariant variant, std::uint64_t seed,
                    unsigned jobs = 1);

// All three variants from one pass (two trainings per subject).
LosoAllResult run_loso_all(const std::vector<SubjectData>& subjects, ModelFamily family,
                           ModelSize size, const TrainConfig& cfg, std::uint64_t seed,
                           unsigned jobs = 1);

// --- subject-level binary threshold analysis ---------------------------------

struct ThresholdRow {
  double threshold = 0.0;
  std::size_t actual_below = 0, predicted_below = 0;
  std::size_t actual_above = 0, predicted_above = 0;
  MetricSet metrics;
  double p_a = 0.0;          // prior probability of AHI >= threshold
  double p_a_given_p = 0.0;  // Bayes posterior given a positive prediction
};

std::vector<ThresholdRow> threshold_table(std::span<const SubjectResult> subjects,
                                          const std::vector<double>& thresholds = {5.0, 15.0,
                                                                                   30.0});

// counts[actual][predicted] over the four severity classes.
using SeverityConfusion = std::array<std::array<std::size_t, 4>, 4>;
SeverityConfusion severity_confusion(std::span<const SubjectResult> subjects);

// --- dataset assembly ---------------------------------------------------------

struct PipelineOptions {
  bool bla = true;
  double artifact_threshold = 0.20;
};

// Artifact filter -> 1 Hz resampling -> standardization -> optional baseline
// adjustment -> 60 s segmentation, grouped per subject with scored-event
// counts for actual AHI.
std::vector<SubjectData> build_subjects(const std::vector<Recording>& recs,
                                        const std::vector<EventAnnotation>& anns,
                                        const PipelineOptions& opt);

PeriodSet concat_periods(const std::vector<SubjectData>& subjects);

// Synthetic study population: per-subject target AHI spread linearly over
// [ahi_min, ahi_max], seeded per subject. The clean variant zeroes noise,
// drift, shifts and jitter but shares event placement with the noisy one.
struct PopulationConfig {
  std::size_t subjects = 20;
  double duration_h = 4.0;
  double ahi_min = 0.0;
  double ahi_max = 40.0;
  double hypopnea_fraction = 0.3;
  double breath_rate_hz = 0.25;
  double breath_amplitude = 1.0;
  double sample_rate_hz = 10.0;
  double event_min_s = 10.0;
  double event_max_s = 30.0;
  double noise_sd = 0.15;
  double drift_sd = 0.02;
  double shift_probability = 0.05;
  double jitter_sd_s = 0.005;
  std::uint64_t seed = 0;
};

std::vector<std::pair<Recording, EventAnnotation>> generate_population(
    const PopulationConfig& cfg, bool clean);

}  // namespace aspm
