#include <fstream>
#include <map>
#include <sstream>

#include "pgvae/binary_io.hpp"
#include "pgvae/training.hpp"

namespace pgvae {

namespace {

constexpr char kMagic[5] = "PGCK";

void write_tensor(std::ostream& os, const std::string& name, const Tensor<float>& t) {
  io::write_string(os, name);
  const Shape& s = t.shape();
  for (int d : {s.n, s.c, s.h, s.w}) io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  io::write_array<float>(os, t.values());
}

template <typename Ref>
void write_group(std::ostream& os, const std::string& prefix, const std::vector<Ref>& params) {
  for (const auto& p : params) write_tensor(os, prefix + p.name, *p.value);
}

void write_moments(std::ostream& os, const std::string& prefix, const std::vector<nn::ConstParamRef<float>>& params,
                   const std::vector<Tensor<float>>& moments) {
  for (std::size_t i = 0; i < params.size(); ++i) write_tensor(os, prefix + params[i].name, moments[i]);
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& s, const char* what) {
  std::istringstream is(s);
  is >> rng;
  if (is.fail()) throw FormatError(std::string("corrupt RNG state: ") + what);
}

using TensorMap = std::map<std::string, Tensor<float>>;

void restore_into(Tensor<float>& dst, TensorMap& tensors, const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("checkpoint is missing tensor " + name);
  if (!(it->second.shape() == dst.shape()))
    throw FormatError("checkpoint tensor " + name + " has shape " + it->second.shape().str() + ", expected " +
                      dst.shape().str());
  dst = std::move(it->second);
  tensors.erase(it);
}

void restore_params(std::vector<nn::ParamRef<float>> params, const std::string& prefix, TensorMap& tensors) {
  for (auto& p : params) restore_into(*p.value, tensors, prefix + p.name);
}

void restore_moments(nn::Adam& opt, const std::vector<nn::ParamRef<float>>& params, const std::string& prefix,
                     TensorMap& tensors) {
  auto& m = opt.first_moments();
  auto& v = opt.second_moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    restore_into(m[i], tensors, prefix + ".m/" + params[i].name);
    restore_into(v[i], tensors, prefix + ".v/" + params[i].name);
  }
}

}  // namespace

void save_checkpoint(const TrainState& state, const FeatureExtractor<float>& extractor,
                     const std::filesystem::path& path) {
  const auto gen = state.generator.parameters();
  const auto disc = state.discriminator.parameters();
  const auto perc = extractor.parameters();
  const std::size_t count = 3 * gen.size() + 3 * disc.size() + perc.size();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os.write(kMagic, 4);
    io::write_pod<std::uint32_t>(os, kCheckpointVersion);
    io::write_string(os, canonical_json(state.config));
    io::write_pod<std::uint64_t>(os, state.step);
    io::write_string(os, rng_state(state.data_rng));
    io::write_string(os, rng_state(state.noise_rng));
    io::write_pod<std::uint64_t>(os, state.gen_opt.steps());
    io::write_pod<std::uint64_t>(os, state.disc_opt.steps());
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(count));
    write_group(os, "gen/", gen);
    write_moments(os, "gen.m/", gen, state.gen_opt.first_moments());
    write_moments(os, "gen.v/", gen, state.gen_opt.second_moments());
    write_group(os, "disc/", disc);
    write_moments(os, "disc.m/", disc, state.disc_opt.first_moments());
    write_moments(os, "disc.v/", disc, state.disc_opt.second_moments());
    write_group(os, "perceptual/", perc);

    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(state.synthetic_bank.size()));
    for (const auto& p : state.synthetic_bank) {
      io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.size));
      io::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(p.provenance));
      for (int v : {p.source.volume_id, p.source.z, p.source.center_y, p.source.center_x})
        io::write_pod<std::int32_t>(os, v);
      io::write_array<float>(os, p.image);
      io::write_array<std::uint8_t>(os, p.mask);
    }
    if (!os) throw std::runtime_error("error writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                           const FeatureExtractor<float>& extractor) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  io::expect_magic(is, kMagic);
  const auto version = io::read_pod<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));

  RunConfig stored;
  try {
    stored = run_config_from_json(nlohmann::json::parse(io::read_string(is, "config")));
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint config unreadable: ") + e.what());
  }
  if (!(stored.model == config.model)) throw FormatError("checkpoint model config does not match the run config");

  TrainState state(config);
  state.step = io::read_pod<std::uint64_t>(is, "step");
  restore_rng(state.data_rng, io::read_string(is, "data_rng"), "data_rng");
  restore_rng(state.noise_rng, io::read_string(is, "noise_rng"), "noise_rng");
  state.gen_opt.set_steps(io::read_pod<std::uint64_t>(is, "gen_adam_t"));
  state.disc_opt.set_steps(io::read_pod<std::uint64_t>(is, "disc_adam_t"));

  TensorMap tensors;
  const auto count = io::read_pod<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = io::read_string(is, "tensor name", 4096);
    std::uint32_t d[4];
    for (auto& v : d) v = io::read_pod<std::uint32_t>(is, "tensor dims");
    const Shape shape{static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]), static_cast<int>(d[3])};
    if (shape.size() > (std::size_t{1} << 28)) throw FormatError("implausible tensor size for " + name);
    Tensor<float> t(shape);
    io::read_array<float>(is, t.values(), name.c_str());
    if (!tensors.emplace(std::move(name), std::move(t)).second) throw FormatError("duplicate tensor in checkpoint");
  }

  const auto gen = state.generator.parameters();
  const auto disc = state.discriminator.parameters();
  restore_params(gen, "gen/", tensors);
  restore_moments(state.gen_opt, gen, "gen", tensors);
  restore_params(disc, "disc/", tensors);
  restore_moments(state.disc_opt, disc, "disc", tensors);
  for (const auto& p : extractor.parameters()) {
    Tensor<float> stored_weights(p.value->shape());
    restore_into(stored_weights, tensors, "perceptual/" + p.name);
    if (stored_weights.storage() != p.value->storage())
      throw FormatError("perceptual extractor weights differ from the checkpoint (" + p.name + ")");
  }
  if (!tensors.empty()) throw FormatError("unexpected tensor in checkpoint: " + tensors.begin()->first);

  const auto bank = io::read_pod<std::uint32_t>(is, "bank size");
  for (std::uint32_t i = 0; i < bank; ++i) {
    PatchPair p;
    p.size = static_cast<int>(io::read_pod<std::uint32_t>(is, "bank patch size"));
    if (p.size != config.model.patch_size) throw FormatError("bank patch size does not match the model");
    const auto prov = io::read_pod<std::uint8_t>(is, "bank provenance");
    if (prov > 1) throw FormatError("bad provenance in bank");
    p.provenance = static_cast<Provenance>(prov);
    p.source.volume_id = io::read_pod<std::int32_t>(is, "bank source");
    p.source.z = io::read_pod<std::int32_t>(is, "bank source");
    p.source.center_y = io::read_pod<std::int32_t>(is, "bank source");
    p.source.center_x = io::read_pod<std::int32_t>(is, "bank source");
    p.image.resize(static_cast<std::size_t>(p.size) * p.size);
    p.mask.resize(p.image.size());
    io::read_array<float>(is, std::span<float>(p.image), "bank image");
    io::read_array<std::uint8_t>(is, std::span<std::uint8_t>(p.mask), "bank mask");
    state.synthetic_bank.push_back(std::move(p));
  }
  io::expect_eof(is, "checkpoint");
  return state;
}

}  // namespace pgvae
