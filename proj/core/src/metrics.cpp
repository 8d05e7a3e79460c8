#include "vlmq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "vlmq/error.hpp"
#include "vlmq/random.hpp"

namespace vlmq::metrics {

namespace {

struct Moments {
  double mean = 0;
  double var = 0;  // unbiased
};

Moments moments(std::span<const double> x) {
  Moments m;
  m.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  if (x.size() > 1) {
    double ss = 0;
    for (double v : x) ss += (v - m.mean) * (v - m.mean);
    m.var = ss / static_cast<double>(x.size() - 1);
  }
  return m;
}

void check_score(double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw InputError("score outside [0,1]");
}

}  // namespace

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw InputError("t-test needs at least two samples per group");
  auto ma = moments(a);
  auto mb = moments(b);
  double va = ma.var / static_cast<double>(a.size());
  double vb = mb.var / static_cast<double>(b.size());
  double se2 = va + vb;
  WelchResult r;
  double diff = ma.mean - mb.mean;
  if (se2 == 0.0) {
    // Both groups constant: the statistic is 0/0 or +-inf.
    r.dof = static_cast<double>(a.size() + b.size() - 2);
    if (diff == 0.0) {
      r.t_statistic = 0;
      r.p_value = 1;
    } else {
      r.t_statistic = std::copysign(std::numeric_limits<double>::infinity(), diff);
      r.p_value = 0;
    }
    return r;
  }
  r.t_statistic = diff / std::sqrt(se2);
  r.dof = se2 * se2 /
          (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  boost::math::students_t dist(r.dof);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t_statistic)));
  r.p_value = std::clamp(r.p_value, 0.0, 1.0);
  return r;
}

DiscReport discriminability(std::span<const ScoredInstance> scored) {
  std::vector<double> good, bad;
  for (const auto& s : scored) {
    check_score(s.score);
    (s.correct ? good : bad).push_back(s.score);
  }
  if (good.empty() || bad.empty()) {
    throw InputError("discriminability needs at least one correct and one incorrect instance");
  }
  DiscReport r;
  r.n_correct = good.size();
  r.n_incorrect = bad.size();
  r.disc = moments(good).mean - moments(bad).mean;
  if (good.size() < 2 || bad.size() < 2) {
    r.note = "t-test undefined: a group has fewer than two samples";
    return r;
  }
  auto t = welch_t_test(good, bad);
  r.p_value = t.p_value;
  r.t_statistic = t.t_statistic;
  r.dof = t.dof;
  return r;
}

std::size_t bin_index(double score, std::size_t n_bins) {
  if (n_bins < 1) throw InputError("n_bins must be >= 1");
  check_score(score);
  const double n = static_cast<double>(n_bins);
  auto idx = static_cast<long long>(std::ceil(score * n)) - 1;
  idx = std::clamp<long long>(idx, 0, static_cast<long long>(n_bins) - 1);
  // Nudge against rounding in score * n so that edges stay right-closed.
  while (idx > 0 && score <= static_cast<double>(idx) / n) --idx;
  while (idx + 1 < static_cast<long long>(n_bins) && score > static_cast<double>(idx + 1) / n) ++idx;
  return static_cast<std::size_t>(idx);
}

CalibrationReport ece(std::span<const ScoredInstance> scored, std::size_t n_bins) {
  if (n_bins < 1) throw InputError("n_bins must be >= 1");
  if (scored.empty()) throw InputError("ece needs at least one scored instance");
  CalibrationReport r;
  r.n = scored.size();
  r.bins.resize(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<std::size_t> hits(n_bins, 0);
  for (const auto& s : scored) {
    auto b = bin_index(s.score, n_bins);
    ++r.bins[b].count;
    conf_sum[b] += s.score;
    if (s.correct) ++hits[b];
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = r.bins[b];
    bin.lower = static_cast<double>(b) / static_cast<double>(n_bins);
    bin.upper = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    if (bin.count == 0) continue;
    bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
    bin.empirical_accuracy = static_cast<double>(hits[b]) / static_cast<double>(bin.count);
    r.ece += static_cast<double>(bin.count) / static_cast<double>(r.n) *
             std::fabs(bin.empirical_accuracy - bin.mean_confidence);
  }
  return r;
}

std::string to_string(CombineMode m) {
  switch (m) {
    case CombineMode::avg: return "avg";
    case CombineMode::prod: return "prod";
    case CombineMode::min: return "min";
  }
  return "?";
}

CombineMode parse_combine_mode(std::string_view s) {
  if (s == "avg") return CombineMode::avg;
  if (s == "prod") return CombineMode::prod;
  if (s == "min") return CombineMode::min;
  throw InputError("unknown combine mode '" + std::string(s) + "'");
}

double combine(double vf, double contr, CombineMode mode) {
  check_score(vf);
  check_score(contr);
  switch (mode) {
    case CombineMode::avg: return (vf + contr) / 2.0;
    case CombineMode::prod: return vf * contr;
    case CombineMode::min: return std::min(vf, contr);
  }
  return 0;
}

std::optional<double> combine(std::optional<double> vf, double contr, CombineMode mode) {
  if (!vf) return std::nullopt;
  return combine(*vf, contr, mode);
}

int binarize(double score, double threshold) { return score >= threshold ? 1 : 0; }

double cohen_kappa(std::span<const int> labels_a, std::span<const int> labels_b) {
  if (labels_a.size() != labels_b.size()) throw InputError("label vectors differ in length");
  if (labels_a.empty()) throw InputError("cohen_kappa needs at least one label");
  std::size_t agree = 0, a1 = 0, b1 = 0;
  for (std::size_t i = 0; i < labels_a.size(); ++i) {
    auto a = labels_a[i], b = labels_b[i];
    if ((a != 0 && a != 1) || (b != 0 && b != 1)) throw InputError("labels must be 0 or 1");
    agree += (a == b);
    a1 += a;
    b1 += b;
  }
  const double n = static_cast<double>(labels_a.size());
  double po = static_cast<double>(agree) / n;
  double pa = static_cast<double>(a1) / n, pb = static_cast<double>(b1) / n;
  double pe = pa * pb + (1 - pa) * (1 - pb);
  if (pe == 1.0) return 1.0;  // both raters constant and identical
  return (po - pe) / (1 - pe);
}

std::string to_string(Choice c) {
  switch (c) {
    case Choice::correct: return "correct";
    case Choice::incorrect: return "incorrect";
    case Choice::unsure: return "unsure";
  }
  return "?";
}

Choice parse_choice(std::string_view s) {
  if (s == "correct") return Choice::correct;
  if (s == "incorrect") return Choice::incorrect;
  if (s == "unsure") return Choice::unsure;
  throw InputError("unknown choice '" + std::string(s) + "'");
}

RelianceReport reliance_metrics(std::span<const Judgment> judgments) {
  RelianceReport r;
  r.n = judgments.size();
  r.unsure_rate.denominator = judgments.size();
  for (const auto& j : judgments) {
    (j.model_was_correct ? r.under_reliance : r.over_reliance).denominator++;
    if (j.choice == Choice::unsure) {
      r.unsure_rate.numerator++;
      continue;
    }
    bool accepts = j.choice == Choice::correct;
    r.accept_rate.denominator++;
    r.user_accuracy.denominator++;
    if (accepts) r.accept_rate.numerator++;
    if (accepts == j.model_was_correct) r.user_accuracy.numerator++;
    if (accepts && !j.model_was_correct) r.over_reliance.numerator++;
    if (!accepts && j.model_was_correct) r.under_reliance.numerator++;
  }
  return r;
}

std::string to_string(RelianceMetric m) {
  switch (m) {
    case RelianceMetric::user_accuracy: return "user_accuracy";
    case RelianceMetric::over_reliance: return "over_reliance";
    case RelianceMetric::under_reliance: return "under_reliance";
    case RelianceMetric::unsure_rate: return "unsure_rate";
    case RelianceMetric::accept_rate: return "accept_rate";
  }
  return "?";
}

RelianceMetric parse_reliance_metric(std::string_view s) {
  for (auto m : {RelianceMetric::user_accuracy, RelianceMetric::over_reliance,
                 RelianceMetric::under_reliance, RelianceMetric::unsure_rate,
                 RelianceMetric::accept_rate}) {
    if (to_string(m) == s) return m;
  }
  throw InputError("unknown reliance metric '" + std::string(s) + "'");
}

std::optional<double> metric_value(const RelianceReport& r, RelianceMetric m) {
  switch (m) {
    case RelianceMetric::user_accuracy: return r.user_accuracy.value();
    case RelianceMetric::over_reliance: return r.over_reliance.value();
    case RelianceMetric::under_reliance: return r.under_reliance.value();
    case RelianceMetric::unsure_rate: return r.unsure_rate.value();
    case RelianceMetric::accept_rate: return r.accept_rate.value();
  }
  return std::nullopt;
}

BootstrapResult bootstrap_significance(std::span<const Judgment> treatment,
                                       std::span<const Judgment> control, RelianceMetric metric,
                                       std::size_t iterations, std::uint64_t seed) {
  if (treatment.empty() || control.empty()) throw InputError("bootstrap needs two non-empty samples");
  if (iterations == 0) throw InputError("bootstrap needs at least one iteration");
  BootstrapResult r;
  r.iterations = iterations;
  auto mt = metric_value(reliance_metrics(treatment), metric);
  auto mc = metric_value(reliance_metrics(control), metric);
  if (mt && mc) r.observed_difference = *mt - *mc;

  Rng rng(seed);
  std::vector<Judgment> bt(treatment.size()), bc(control.size());
  std::size_t le = 0, ge = 0;
  for (std::size_t it = 0; it < iterations; ++it) {
    for (auto& j : bt) j = treatment[rng.index(treatment.size())];
    for (auto& j : bc) j = control[rng.index(control.size())];
    auto a = metric_value(reliance_metrics(bt), metric);
    auto b = metric_value(reliance_metrics(bc), metric);
    if (!a || !b) continue;
    ++r.valid_iterations;
    double d = *a - *b;
    if (d <= 0) ++le;
    if (d >= 0) ++ge;
  }
  if (r.valid_iterations == 0) return r;
  r.p_value = std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) /
                                static_cast<double>(r.valid_iterations));
  return r;
}

SubsetSelection select_study_subset(const std::vector<PoolItem>& pool, const SubsetOptions& options) {
  if (options.trials == 0) throw InputError("subset selection needs at least one trial");
  SubsetSelection sel;
  sel.qualities = options.qualities;
  if (sel.qualities.empty()) {
    bool all_contr = !pool.empty() && std::all_of(pool.begin(), pool.end(), [](const PoolItem& p) {
      return p.scores.contains("contr");
    });
    sel.qualities = all_contr ? std::vector<std::string>{"vf", "contr"} : std::vector<std::string>{"vf"};
  }

  std::vector<const PoolItem*> good, bad;
  for (const auto& p : pool) {
    bool eligible = std::all_of(sel.qualities.begin(), sel.qualities.end(),
                                [&](const std::string& q) { return p.scores.contains(q); });
    if (!eligible) continue;
    (p.correct ? good : bad).push_back(&p);
  }
  if (good.size() < options.per_class || bad.size() < options.per_class) {
    throw InputError("insufficient pool: need " + std::to_string(options.per_class) +
                     " correct and incorrect items with scores, have " + std::to_string(good.size()) +
                     " / " + std::to_string(bad.size()));
  }

  Rng rng(options.seed);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < options.trials; ++t) {
    auto g = good;
    auto b = bad;
    rng.shuffle(g);
    rng.shuffle(b);
    std::vector<const PoolItem*> chosen(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(options.per_class));
    chosen.insert(chosen.end(), b.begin(), b.begin() + static_cast<std::ptrdiff_t>(options.per_class));

    double objective = 0;
    for (const auto& q : sel.qualities) {
      std::vector<ScoredInstance> scored;
      scored.reserve(chosen.size());
      for (const auto* p : chosen) scored.push_back({p->instance_id, p->scores.at(q), p->correct});
      objective += ece(scored, options.n_bins).ece;
    }
    objective /= static_cast<double>(sel.qualities.size());

    SubsetTrial trial;
    for (const auto* p : chosen) trial.ids.push_back(p->instance_id);
    trial.objective = objective;
    if (objective < best) {
      best = objective;
      sel.trial_index = t;
      sel.ids = trial.ids;
      sel.objective = objective;
    }
    sel.trials.push_back(std::move(trial));
  }
  return sel;
}

}  // namespace vlmq::metrics
