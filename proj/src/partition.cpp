#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fedbalance/data.hpp"
#include "fedbalance/rng.hpp"

namespace fedbalance {

void PartitionPlan::validate(int class_count) const {
  if (num_clients < 1) throw ConfigError("partition: num_clients must be >= 1");
  if (classes_min < 1 || classes_min > classes_max || classes_max > class_count) {
    throw ConfigError("partition: need 1 <= classes_min <= classes_max <= class_count");
  }
  if (samples_per_class < 1) throw ConfigError("partition: samples_per_class must be >= 1");
  if (!(global_ratio >= 1.0)) throw ConfigError("partition: global_ratio must be >= 1");
  std::set<int> seen;
  for (int c : minority_classes) {
    if (c < 0 || c >= class_count) {
      throw ConfigError("partition: minority class " + std::to_string(c) + " is not a class");
    }
    if (!seen.insert(c).second) throw ConfigError("partition: duplicate minority class");
  }
  if (static_cast<int>(minority_classes.size()) == class_count) {
    throw ConfigError("partition: every class is a minority class");
  }
}

std::vector<ClientShard> partition(const Dataset& data, const PartitionPlan& plan,
                                   std::span<const int> pool) {
  const int q = data.class_count;
  plan.validate(q);

  std::vector<bool> minority(static_cast<std::size_t>(q), false);
  for (int c : plan.minority_classes) minority[static_cast<std::size_t>(c)] = true;
  // Class sets depend on the minority set but not on the ratio, so a plan and
  // its balanced twin (ratio 1) hand every client the same classes.
  const bool imbalanced = !plan.minority_classes.empty();

  // Separate streams so class assignment and majority cells do not depend on
  // the target ratio.
  Rng assign_rng(derive_seed(plan.seed, {1}));
  Rng minority_rng(derive_seed(plan.seed, {2}));
  Rng pool_rng(derive_seed(plan.seed, {3}));

  // Class sets: least-held classes first, random among ties. Every client
  // holds at least one majority class when there are minority classes.
  std::vector<int> holders(static_cast<std::size_t>(q), 0);
  std::vector<std::vector<int>> classes_of(static_cast<std::size_t>(plan.num_clients));
  std::uniform_int_distribution<int> width(plan.classes_min, plan.classes_max);
  for (int j = 0; j < plan.num_clients; ++j) {
    int c = width(assign_rng);
    std::vector<int> order(static_cast<std::size_t>(q));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), assign_rng);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return holders[a] < holders[b]; });
    auto& mine = classes_of[static_cast<std::size_t>(j)];
    if (imbalanced) {
      auto it = std::find_if(order.begin(), order.end(), [&](int k) { return !minority[k]; });
      mine.push_back(*it);
      order.erase(it);
    }
    for (int k : order) {
      if (static_cast<int>(mine.size()) >= c) break;
      mine.push_back(k);
    }
    for (int k : mine) ++holders[static_cast<std::size_t>(k)];
  }

  // cells[j][p]: samples of class p given to client j.
  std::vector<std::vector<int>> cells(static_cast<std::size_t>(plan.num_clients),
                                      std::vector<int>(static_cast<std::size_t>(q), 0));
  for (int j = 0; j < plan.num_clients; ++j)
    for (int k : classes_of[static_cast<std::size_t>(j)])
      if (!imbalanced || !minority[static_cast<std::size_t>(k)])
        cells[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = plan.samples_per_class;

  if (imbalanced) {
    std::int64_t top = 0;
    for (int k = 0; k < q; ++k)
      if (!minority[static_cast<std::size_t>(k)])
        top = std::max<std::int64_t>(top, std::int64_t{plan.samples_per_class} * holders[static_cast<std::size_t>(k)]);
    // Minority total rounds down; majority classes above target * ratio are
    // trimmed so the realized ratio lands on the plan.
    const auto target = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::floor(static_cast<double>(top) / plan.global_ratio)));
    const auto cap = static_cast<std::int64_t>(std::floor(static_cast<double>(target) * plan.global_ratio + 1e-9));
    for (int k = 0; k < q; ++k) {
      if (minority[static_cast<std::size_t>(k)]) continue;
      std::int64_t have = std::int64_t{plan.samples_per_class} * holders[static_cast<std::size_t>(k)];
      if (have <= cap) continue;
      std::vector<int> who;
      for (int j = 0; j < plan.num_clients; ++j)
        if (cells[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] > 0) who.push_back(j);
      const auto h = static_cast<std::int64_t>(who.size());
      for (std::int64_t i = 0; i < h; ++i) {
        cells[static_cast<std::size_t>(who[i])][static_cast<std::size_t>(k)] =
            static_cast<int>(cap / h + (i < cap % h ? 1 : 0));
      }
    }
    for (int m : plan.minority_classes) {
      std::vector<int> who;
      for (int j = 0; j < plan.num_clients; ++j) {
        const auto& mine = classes_of[static_cast<std::size_t>(j)];
        if (std::find(mine.begin(), mine.end(), m) != mine.end()) who.push_back(j);
      }
      if (who.empty()) {
        std::uniform_int_distribution<int> pick(0, plan.num_clients - 1);
        int j = pick(minority_rng);
        classes_of[static_cast<std::size_t>(j)].push_back(m);
        who.push_back(j);
      }
      std::shuffle(who.begin(), who.end(), minority_rng);
      const auto h = static_cast<std::int64_t>(who.size());
      for (std::int64_t k = 0; k < h; ++k) {
        cells[static_cast<std::size_t>(who[k])][static_cast<std::size_t>(m)] =
            static_cast<int>(target / h + (k < target % h ? 1 : 0));
      }
    }
  }

  std::vector<std::vector<int>> avail(static_cast<std::size_t>(q));
  if (pool.empty()) {
    avail = data.indices_by_class();
  } else {
    for (int i : pool) avail[static_cast<std::size_t>(data.labels.at(static_cast<std::size_t>(i)))].push_back(i);
  }
  std::ostringstream shortfall;
  for (int k = 0; k < q; ++k) {
    std::int64_t need = 0;
    for (const auto& row : cells) need += row[static_cast<std::size_t>(k)];
    auto have = static_cast<std::int64_t>(avail[static_cast<std::size_t>(k)].size());
    if (need > have) shortfall << " class " << k << ": need " << need << ", have " << have << ";";
  }
  if (!shortfall.str().empty()) {
    throw ConfigError("partition: not enough samples for the plan:" + shortfall.str());
  }
  for (auto& group : avail) std::shuffle(group.begin(), group.end(), pool_rng);

  std::vector<std::size_t> cursor(static_cast<std::size_t>(q), 0);
  std::vector<ClientShard> shards(static_cast<std::size_t>(plan.num_clients));
  for (int j = 0; j < plan.num_clients; ++j) {
    auto& s = shards[static_cast<std::size_t>(j)];
    s.client_id = j;
    s.per_class_counts.assign(static_cast<std::size_t>(q), 0);
    for (int k = 0; k < q; ++k) {
      int n = cells[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
      auto& src = avail[static_cast<std::size_t>(k)];
      auto& at = cursor[static_cast<std::size_t>(k)];
      s.indices.insert(s.indices.end(), src.begin() + static_cast<std::ptrdiff_t>(at),
                       src.begin() + static_cast<std::ptrdiff_t>(at + n));
      at += static_cast<std::size_t>(n);
      s.per_class_counts[static_cast<std::size_t>(k)] = n;
    }
    std::sort(s.indices.begin(), s.indices.end());
  }
  return shards;
}

}  // namespace fedbalance
