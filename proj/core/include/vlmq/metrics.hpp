#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vlmq::metrics {

struct ScoredInstance {
  std::string instance_id;
  double score = 0;  // in [0,1]
  bool correct = false;
};

// ---- Discriminability ---------------------------------------------------

struct WelchResult {
  double t_statistic = 0;
  double dof = 0;
  double p_value = 1;  // two-sided
};

// Unpaired unequal-variance t-test. Needs at least two samples per group.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct DiscReport {
  double disc = 0;  // mean(correct) - mean(incorrect)
  std::optional<double> p_value;
  std::optional<double> t_statistic;
  std::optional<double> dof;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
  std::string note;  // set when the t-test could not run
};

// Throws InputError when either group is empty; with fewer than two samples in
// a group the difference is still reported but the p-value is left empty.
DiscReport discriminability(std::span<const ScoredInstance> scored);

// ---- Calibration ---------------------------------------------------------

struct CalibrationBin {
  double lower = 0;
  double upper = 0;
  std::size_t count = 0;
  double mean_confidence = 0;
  double empirical_accuracy = 0;
};

struct CalibrationReport {
  double ece = 0;
  std::size_t n = 0;
  std::vector<CalibrationBin> bins;
};

inline constexpr std::size_t kDefaultBins = 10;

// Equal-width, right-closed bins over [0,1]; 0 falls in the first bin and 1 in
// the last. Bin i covers (i/n, (i+1)/n].
std::size_t bin_index(double score, std::size_t n_bins);

CalibrationReport ece(std::span<const ScoredInstance> scored, std::size_t n_bins = kDefaultBins);

// ---- Combined scores -----------------------------------------------------

enum class CombineMode { avg, prod, min };

std::string to_string(CombineMode m);
CombineMode parse_combine_mode(std::string_view s);

double combine(double vf, double contr, CombineMode mode);
// An unscorable VF (nullopt) stays unscorable.
std::optional<double> combine(std::optional<double> vf, double contr, CombineMode mode);

// ---- Agreement -----------------------------------------------------------

inline constexpr double kBinarizeThreshold = 0.5;

// score >= threshold maps to 1.
int binarize(double score, double threshold = kBinarizeThreshold);

double cohen_kappa(std::span<const int> labels_a, std::span<const int> labels_b);

// ---- Reliance ------------------------------------------------------------

enum class Choice { correct, incorrect, unsure };

std::string to_string(Choice c);
Choice parse_choice(std::string_view s);

struct Judgment {
  Choice choice = Choice::unsure;
  bool model_was_correct = false;
};

struct Rate {
  std::size_t numerator = 0;
  std::size_t denominator = 0;
  // nullopt when the basis is empty
  std::optional<double> value() const {
    if (denominator == 0) return std::nullopt;
    return static_cast<double>(numerator) / static_cast<double>(denominator);
  }
};

// Bases: unsure over all judgments; accuracy and accept rate over non-unsure
// judgments; over-reliance (false accept) over judgments on wrong predictions;
// under-reliance (false reject) over judgments on correct predictions.
struct RelianceReport {
  std::size_t n = 0;
  Rate unsure_rate;
  Rate accept_rate;
  Rate user_accuracy;
  Rate over_reliance;
  Rate under_reliance;
};

RelianceReport reliance_metrics(std::span<const Judgment> judgments);

enum class RelianceMetric { user_accuracy, over_reliance, under_reliance, unsure_rate, accept_rate };

std::string to_string(RelianceMetric m);
RelianceMetric parse_reliance_metric(std::string_view s);
std::optional<double> metric_value(const RelianceReport& r, RelianceMetric m);

inline constexpr std::size_t kDefaultBootstrapIterations = 10000;

struct BootstrapResult {
  double p_value = 1;
  double observed_difference = 0;  // treatment - control on the original samples
  std::size_t iterations = 0;
  std::size_t valid_iterations = 0;  // resamples where both metrics were defined
};

// Two-sided percentile bootstrap for metric(treatment) != metric(control).
BootstrapResult bootstrap_significance(std::span<const Judgment> treatment,
                                       std::span<const Judgment> control, RelianceMetric metric,
                                       std::size_t iterations = kDefaultBootstrapIterations,
                                       std::uint64_t seed = 0);

// ---- Study subset selection ----------------------------------------------

struct PoolItem {
  std::string instance_id;
  bool correct = false;
  std::map<std::string, double> scores;  // quality name -> score
};

struct SubsetTrial {
  std::vector<std::string> ids;  // drawn correct items first, then incorrect
  double objective = 0;
};

struct SubsetSelection {
  std::vector<std::string> ids;
  double objective = 0;
  std::size_t trial_index = 0;
  std::vector<std::string> qualities;
  std::vector<SubsetTrial> trials;
};

struct SubsetOptions {
  std::size_t trials = 50;
  std::size_t per_class = 50;
  std::size_t n_bins = kDefaultBins;
  std::uint64_t seed = 0;
  // Empty: {"vf", "contr"} when every item carries both, else {"vf"}.
  std::vector<std::string> qualities;
};

// Draws `trials` balanced subsets and keeps the one with the lowest mean ECE
// over the chosen qualities; ties go to the earliest trial.
SubsetSelection select_study_subset(const std::vector<PoolItem>& pool, const SubsetOptions& options);

}  // namespace vlmq::metrics
