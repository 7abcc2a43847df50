#include "pgvae/injection.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace pgvae {

namespace {

std::uint64_t substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint64_t out = 0;
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out;
}

template <typename T>
void fisher_yates(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

}  // namespace

MixPlan plan_batch(int batch_size, double ratio) {
  if (batch_size < 1) throw std::invalid_argument("plan_batch: batch size must be >= 1");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("plan_batch: ratio must lie in [0, 1]");
  MixPlan p;
  p.batch_size = batch_size;
  p.ratio = ratio;
  p.n_synth = static_cast<int>(std::floor(ratio * batch_size + 0.5));
  p.n_real = batch_size - p.n_synth;
  return p;
}

std::vector<PatchPair> mix_batch(std::span<const PatchPair> real_pool, const SyntheticGenerator& generator,
                                 const MixPlan& plan, std::uint64_t seed) {
  if (static_cast<int>(real_pool.size()) < plan.n_real)
    throw std::invalid_argument("mix_batch: real pool smaller than the planned real count");
  if (plan.n_synth > 0 && real_pool.empty()) throw std::invalid_argument("mix_batch: no source patches for synthesis");
  if (plan.n_synth > 0 && !generator) throw std::invalid_argument("mix_batch: synthetic patches requested without a generator");

  std::vector<PatchPair> batch;
  batch.reserve(static_cast<std::size_t>(plan.batch_size));

  std::mt19937_64 real_rng(substream(seed, 1));
  std::vector<std::size_t> order(real_pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  fisher_yates(order, real_rng);
  for (int i = 0; i < plan.n_real; ++i) {
    PatchPair p = real_pool[order[static_cast<std::size_t>(i)]];
    p.provenance = Provenance::Real;
    batch.push_back(std::move(p));
  }

  if (plan.n_synth > 0) {
    std::mt19937_64 synth_rng(substream(seed, 2));
    std::uniform_int_distribution<std::size_t> pick(0, real_pool.size() - 1);
    for (int i = 0; i < plan.n_synth; ++i) {
      const std::size_t src = pick(synth_rng);
      const std::uint64_t gen_seed = synth_rng();
      PatchPair p = generator(real_pool[src], gen_seed);
      p.provenance = Provenance::Synthetic;
      batch.push_back(std::move(p));
    }
  }

  std::mt19937_64 order_rng(substream(seed, 3));
  fisher_yates(batch, order_rng);
  return batch;
}

}  // namespace pgvae
