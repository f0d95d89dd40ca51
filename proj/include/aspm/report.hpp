#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aspm/eval.hpp"
#include "aspm/metrics.hpp"

namespace aspm {

// All CSV output: ',' separators, '.' decimals, header row, shortest
// round-trip float formatting, "NaN" for undefined values.

void write_fold_metrics_csv(const std::filesystem::path& path, const KfoldResult& result);
void write_summary_csv(const std::filesystem::path& path, const KfoldResult& result);
void write_train_log_csv(const std::filesystem::path& path, const KfoldResult& result);

void write_subjects_csv(const std::filesystem::path& path,
                        std::span<const SubjectResult> subjects);

// One section per variant, matching the subject-threshold analysis layout.
void write_threshold_csv(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, std::vector<ThresholdRow>>>& tables);

void write_scatter_csv(const std::filesystem::path& path, std::span<const SubjectResult> subjects);
void write_bland_altman_csv(const std::filesystem::path& path,
                            std::span<const SubjectResult> subjects);
void write_agreement_csv(const std::filesystem::path& path, const AgreementStats& stats);
void write_severity_confusion_csv(const std::filesystem::path& path,
                                  const SeverityConfusion& counts);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace aspm
