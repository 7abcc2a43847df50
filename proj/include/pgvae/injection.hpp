#pragma once

// Synthetic:real batch composition.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pgvae/patch.hpp"

namespace pgvae {

/// `ratio` is the synthetic fraction of the batch.
struct MixPlan {
  int batch_size = 0;
  double ratio = 0.0;
  int n_synth = 0;
  int n_real = 0;
  bool operator==(const MixPlan&) const = default;
};

/// n_synth = floor(ratio * B + 0.5). Throws std::invalid_argument for B < 1
/// or ratio outside [0, 1].
MixPlan plan_batch(int batch_size, double ratio);

/// Produces one synthetic pair from a real source pair and a generation seed.
using SyntheticGenerator = std::function<PatchPair(const PatchPair& source, std::uint64_t seed)>;

/// Real members are the first n_real entries of a seeded permutation of the
/// pool, so they do not depend on the ratio. Synthetic members come from
/// seeded source picks. The combined batch is shuffled with a third stream.
/// The generator is never invoked when plan.n_synth == 0.
std::vector<PatchPair> mix_batch(std::span<const PatchPair> real_pool, const SyntheticGenerator& generator,
                                 const MixPlan& plan, std::uint64_t seed);

}  // namespace pgvae
