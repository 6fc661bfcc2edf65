#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xmatch/candidates.hpp"
#include "xmatch/corpus.hpp"
#include "xmatch/features.hpp"

namespace xmatch {

/// Profiles of the cookies named in `pairs`, sharing the full corpus's
/// vocabularies and idf tables. Throws Error for cookies without events.
ProfileSet restrict_to(const ProfileSet& profiles, const PairSet& pairs);

/// Feature rows for every candidate, optionally followed by extra columns
/// (which must cover every candidate). Rows are in pair order.
FeatureTable build_features(const ProfileSet& profiles, std::span<const CandidatePair> candidates,
                            const ExtraColumns* extras = nullptr, int threads = 1);

/// Truth pairs present among the candidates.
PairSet recall_ceiling(std::span<const CandidatePair> candidates, const PairSet& truth);

}  // namespace xmatch
