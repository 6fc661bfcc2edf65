#include "xmatch/pipeline.hpp"

#include <algorithm>
#include <string>

#include "xmatch/evaluator.hpp"
#include "xmatch/parallel.hpp"

namespace xmatch {

ProfileSet restrict_to(const ProfileSet& profiles, const PairSet& pairs) {
  const auto ids = cookies_of(pairs);
  return profiles.subset(ids);
}

FeatureTable build_features(const ProfileSet& profiles, std::span<const CandidatePair> candidates,
                            const ExtraColumns* extras, int threads) {
  FeatureTable table;
  table.columns = base_feature_names();
  if (extras) {
    for (std::size_t i = 0; i < extras->width; ++i) table.columns.push_back("extra" + std::to_string(i + 1));
  }
  table.pairs.reserve(candidates.size());
  for (const auto& c : candidates) table.pairs.push_back(c.pair);
  table.rows.resize(candidates.size());
  parallel_for(candidates.size(), threads, [&](std::size_t i) {
    const CookiePair& pair = candidates[i].pair;
    std::span<const double> more;
    if (extras) more = extras->at(pair);
    table.rows[i] = assemble(profiles.at(pair.first()), profiles.at(pair.second()), profiles.idf(), more);
  });
  table.sort_by_pair();
  return table;
}

PairSet recall_ceiling(std::span<const CandidatePair> candidates, const PairSet& truth) {
  PairSet hit;
  for (const auto& c : candidates) {
    if (truth.contains(c.pair)) hit.insert(c.pair);
  }
  return hit;
}

}  // namespace xmatch
