#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "pgvae/losses.hpp"
#include "pgvae/models.hpp"
#include "pgvae/phantom.hpp"

namespace pgvae {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct OptimizerSettings {
  std::string type = "adam";
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables clipping
  bool operator==(const OptimizerSettings&) const = default;
};

struct Seeds {
  std::uint64_t data = 2;
  std::uint64_t noise = 3;
  bool operator==(const Seeds&) const = default;
};

enum class SyntheticMode { Live, FrozenBank };

struct RunConfig {
  ModelConfig model;
  LossWeights weights;
  FTLParams ftl;
  OptimizerSettings optimizer;
  int batch_size = 8;
  int epochs = 1;
  double ratio = 0.0;
  int warmup_epochs = 1;  // epochs trained at ratio 0 before any synthesis
  double synth_tau = 1.0;
  SyntheticMode synthetic_mode = SyntheticMode::Live;
  Seeds seeds;
  int checkpoint_every = 0;  // steps; 0 disables
  int eval_every = 0;        // epochs; 0 evaluates only at the end

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& c);
/// Strict: every field must be present and unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& c, const std::filesystem::path& path);

/// Stable serialization used for hashing and checkpoint echoes.
std::string canonical_json(const RunConfig& c);
/// FNV-1a 64 of canonical_json.
std::uint64_t config_hash(const RunConfig& c);

nlohmann::json to_json(const PhantomSpec& s);
/// Lenient: absent keys keep the defaults of default_phantom_spec(); unknown keys rejected.
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

}  // namespace pgvae
