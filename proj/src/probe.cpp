#include "patchforge/probe.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <map>

namespace patchforge {

ProbeConfig ProbeConfig::for_dataset(std::size_t n_train) {
  ProbeConfig config;
  const std::size_t cap = std::min<std::size_t>(std::max<std::size_t>(n_train, 1),
                                                static_cast<std::size_t>(config.base_batch_size));
  config.batch_size = static_cast<int>(std::bit_floor(cap));
  return config;
}

void ProbeConfig::validate() const {
  if (base_batch_size < 1 || batch_size < 1) {
    throw ValidationError("batch sizes must be positive");
  }
  if (batch_size > base_batch_size) {
    throw ValidationError("batch_size " + std::to_string(batch_size) +
                          " exceeds base_batch_size " + std::to_string(base_batch_size));
  }
  if (total_steps < 1) {
    throw ValidationError("total_steps must be positive");
  }
  if (!(base_lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw ValidationError("learning rate and weight decay must be non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ValidationError("momentum must lie in [0, 1)");
  }
  if (early_stop_divisor < 1) {
    throw ValidationError("early_stop_divisor must be positive");
  }
}

double lr_at_step(const ProbeConfig& config, int step) {
  if (step < 0 || step > config.total_steps) {
    throw ValidationError("step " + std::to_string(step) + " outside 0.." +
                          std::to_string(config.total_steps));
  }
  const double t = static_cast<double>(step) / config.total_steps;
  return config.lr() * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

EpochPlan epoch_plan(const ProbeConfig& config, std::size_t n_train) {
  if (n_train == 0) {
    throw ValidationError("training set is empty");
  }
  EpochPlan plan;
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  plan.steps_per_epoch = static_cast<int>((n_train + batch - 1) / batch);
  plan.max_epochs = (config.total_steps + plan.steps_per_epoch - 1) / plan.steps_per_epoch;
  plan.patience = std::max(1, plan.max_epochs / config.early_stop_divisor);
  return plan;
}

double balanced_accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw ValidationError("balanced_accuracy: " + std::to_string(y_true.size()) +
                          " labels vs " + std::to_string(y_pred.size()) + " predictions");
  }
  if (y_true.empty()) {
    throw ValidationError("balanced_accuracy needs at least one sample");
  }
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // hits, total
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    auto& [hits, total] = per_class[y_true[i]];
    ++total;
    hits += y_true[i] == y_pred[i] ? 1 : 0;
  }
  double sum = 0.0;
  for (const auto& [label, counts] : per_class) {
    sum += static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  return sum / static_cast<double>(per_class.size());
}

namespace {

struct GroupStats {
  std::string name;
  std::vector<std::size_t> members;
  std::vector<double> class_counts;
};

// Squared deviation of every (split, class) count and every split size from
// its target.
class SplitCost {
 public:
  SplitCost(std::size_t splits, std::size_t classes, std::vector<double> targets_sc,
            std::vector<double> targets_s)
      : classes_(classes),
        targets_sc_(std::move(targets_sc)),
        targets_s_(std::move(targets_s)),
        counts_sc_(splits * classes, 0.0),
        counts_s_(splits, 0.0) {}

  void add(std::size_t split, const GroupStats& g, double sign) {
    for (std::size_t c = 0; c < classes_; ++c) {
      counts_sc_[split * classes_ + c] += sign * g.class_counts[c];
    }
    counts_s_[split] += sign * static_cast<double>(g.members.size());
  }

  double split_cost(std::size_t split) const {
    double cost = 0.0;
    for (std::size_t c = 0; c < classes_; ++c) {
      const double d = counts_sc_[split * classes_ + c] - targets_sc_[split * classes_ + c];
      cost += d * d;
    }
    const double d = counts_s_[split] - targets_s_[split];
    return cost + d * d;
  }

  // Cost change of moving g from split `from` (or nowhere) into `to`.
  double move_delta(const GroupStats& g, std::optional<std::size_t> from, std::size_t to) {
    const double before = split_cost(to) + (from ? split_cost(*from) : 0.0);
    if (from) {
      add(*from, g, -1.0);
    }
    add(to, g, 1.0);
    const double after = split_cost(to) + (from ? split_cost(*from) : 0.0);
    add(to, g, -1.0);
    if (from) {
      add(*from, g, 1.0);
    }
    return after - before;
  }

  double count(std::size_t split, std::size_t c) const { return counts_sc_[split * classes_ + c]; }
  double size(std::size_t split) const { return counts_s_[split]; }

 private:
  std::size_t classes_;
  std::vector<double> targets_sc_;
  std::vector<double> targets_s_;
  std::vector<double> counts_sc_;
  std::vector<double> counts_s_;
};

}  // namespace

SplitAssignment split_stratified_grouped(std::span<const int> labels,
                                         std::span<const std::string> groups,
                                         std::span<const double> fractions, std::uint64_t seed) {
  if (labels.size() != groups.size()) {
    throw ValidationError("split: " + std::to_string(labels.size()) + " labels vs " +
                          std::to_string(groups.size()) + " groups");
  }
  if (labels.empty()) {
    throw ValidationError("split: no samples");
  }
  if (fractions.empty()) {
    throw ValidationError("split: no fractions given");
  }
  double fraction_sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) {
      throw ValidationError("split: fractions must be non-negative");
    }
    fraction_sum += f;
  }
  if (std::abs(fraction_sum - 1.0) > 1e-6) {
    throw ValidationError("split: fractions sum to " + std::to_string(fraction_sum) +
                          ", expected 1");
  }
  int max_label = 0;
  for (int label : labels) {
    if (label < 0) {
      throw ValidationError("split: negative class id");
    }
    max_label = std::max(max_label, label);
  }
  const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
  const std::size_t splits = fractions.size();
  const std::size_t n = labels.size();

  std::map<std::string, std::size_t> group_index;
  std::vector<GroupStats> stats;
  std::vector<double> class_totals(classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = group_index.emplace(groups[i], stats.size());
    if (inserted) {
      stats.push_back({groups[i], {}, std::vector<double>(classes, 0.0)});
    }
    auto& g = stats[it->second];
    g.members.push_back(i);
    g.class_counts[static_cast<std::size_t>(labels[i])] += 1.0;
    class_totals[static_cast<std::size_t>(labels[i])] += 1.0;
  }

  std::vector<double> targets_sc(splits * classes);
  std::vector<double> targets_s(splits);
  for (std::size_t s = 0; s < splits; ++s) {
    targets_s[s] = fractions[s] * static_cast<double>(n);
    for (std::size_t c = 0; c < classes; ++c) {
      targets_sc[s * classes + c] = fractions[s] * class_totals[c];
    }
  }
  SplitCost cost(splits, classes, targets_sc, targets_s);

  // Random order breaks ties between equal groups; large groups go first so
  // small ones can fill the remaining gaps.
  std::vector<std::size_t> order(stats.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng = CounterRng::substream(seed, "split");
  rng.shuffle(order.begin(), order.end());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return stats[a].members.size() > stats[b].members.size();
  });

  std::vector<std::size_t> placed(stats.size(), 0);
  for (std::size_t gi : order) {
    std::size_t best_split = 0;
    double best_delta = 0.0;
    for (std::size_t s = 0; s < splits; ++s) {
      const double delta = cost.move_delta(stats[gi], std::nullopt, s);
      if (s == 0 || delta < best_delta - 1e-12) {
        best_split = s;
        best_delta = delta;
      }
    }
    placed[gi] = best_split;
    cost.add(best_split, stats[gi], 1.0);
  }

  // Local search: single moves and pairwise swaps while the cost drops.
  for (int pass = 0; pass < 50; ++pass) {
    bool improved = false;
    for (std::size_t gi : order) {
      for (std::size_t s = 0; s < splits; ++s) {
        if (s != placed[gi] && cost.move_delta(stats[gi], placed[gi], s) < -1e-9) {
          cost.add(placed[gi], stats[gi], -1.0);
          cost.add(s, stats[gi], 1.0);
          placed[gi] = s;
          improved = true;
        }
      }
    }
    for (std::size_t a = 0; a < order.size(); ++a) {
      for (std::size_t b = a + 1; b < order.size(); ++b) {
        const std::size_t ga = order[a];
        const std::size_t gb = order[b];
        const std::size_t sa = placed[ga];
        const std::size_t sb = placed[gb];
        if (sa == sb) {
          continue;
        }
        const double before = cost.split_cost(sa) + cost.split_cost(sb);
        cost.add(sa, stats[ga], -1.0);
        cost.add(sb, stats[ga], 1.0);
        cost.add(sb, stats[gb], -1.0);
        cost.add(sa, stats[gb], 1.0);
        const double after = cost.split_cost(sa) + cost.split_cost(sb);
        if (after < before - 1e-9) {
          placed[ga] = sb;
          placed[gb] = sa;
          improved = true;
        } else {
          cost.add(sa, stats[gb], -1.0);
          cost.add(sb, stats[gb], 1.0);
          cost.add(sb, stats[ga], -1.0);
          cost.add(sa, stats[ga], 1.0);
        }
      }
    }
    if (!improved) {
      break;
    }
  }

  SplitAssignment out;
  out.split.assign(n, 0);
  for (std::size_t gi = 0; gi < stats.size(); ++gi) {
    for (std::size_t i : stats[gi].members) {
      out.split[i] = static_cast<int>(placed[gi]);
    }
  }
  const auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  for (std::size_t s = 0; s < splits; ++s) {
    if (fractions[s] == 0.0) {
      continue;
    }
    const double size = cost.size(s);
    if (size == 0.0) {
      out.warnings.push_back("split " + std::to_string(s) + " is empty (requested fraction " +
                             fmt(fractions[s]) + ")");
      continue;
    }
    for (std::size_t c = 0; c < classes; ++c) {
      if (class_totals[c] == 0.0) {
        continue;
      }
      const double global = class_totals[c] / static_cast<double>(n);
      const double local = cost.count(s, c) / size;
      if (std::abs(local - global) > 0.10 * global + 1e-12) {
        out.warnings.push_back("split " + std::to_string(s) + " class " + std::to_string(c) +
                               " proportion " + fmt(local) + " vs global " + fmt(global));
      }
    }
  }
  return out;
}

Eigen::MatrixXd initial_head_weights(Eigen::Index k, Eigen::Index classes, std::uint64_t seed) {
  CounterRng rng = CounterRng::substream(seed, "probe-init");
  const double bound = 1.0 / std::sqrt(static_cast<double>(k));
  Eigen::MatrixXd w(k, classes);
  for (Eigen::Index j = 0; j < classes; ++j) {
    for (Eigen::Index i = 0; i < k; ++i) {
      w(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
    }
  }
  return w;
}

void summarize(ProbeResult& result) {
  const std::size_t n = result.runs.size();
  if (n == 0) {
    result.mean = result.std = 0.0;
    return;
  }
  double sum = 0.0;
  for (const auto& run : result.runs) {
    sum += run.balanced_accuracy;
  }
  result.mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto& run : result.runs) {
    sq += (run.balanced_accuracy - result.mean) * (run.balanced_accuracy - result.mean);
  }
  result.std = n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0;
}

std::string to_json(const ProbeResult& result) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : result.runs) {
    nlohmann::json j{{"seed", run.seed},
                     {"balanced_accuracy", run.balanced_accuracy},
                     {"steps", run.steps},
                     {"epochs", run.epochs},
                     {"best_epoch", run.best_epoch},
                     {"early_stopped", run.early_stopped}};
    if (run.test_balanced_accuracy) {
      j["test_balanced_accuracy"] = *run.test_balanced_accuracy;
    }
    runs.push_back(std::move(j));
  }
  const ProbeConfig& c = result.config;
  nlohmann::json out{{"runs", runs},
                     {"mean", result.mean},
                     {"std", result.std},
                     {"config_echo",
                      {{"base_batch_size", c.base_batch_size},
                       {"batch_size", c.batch_size},
                       {"base_lr", c.base_lr},
                       {"lr", c.lr()},
                       {"total_steps", c.total_steps},
                       {"momentum", c.momentum},
                       {"nesterov", c.nesterov},
                       {"weight_decay", c.weight_decay},
                       {"schedule", "cosine"},
                       {"warmup_steps", 0},
                       {"hidden_layers", 0},
                       {"dropout", 0.0}}}};
  return out.dump(2);
}

}  // namespace patchforge
