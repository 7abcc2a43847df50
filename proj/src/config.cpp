#include "pgvae/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace pgvae {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& keys, const std::string& where, bool require_all) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (!keys.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  if (require_all)
    for (const auto& k : keys)
      if (!j.contains(k)) throw ConfigError(where + ": missing key '" + k + "'");
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
void maybe(const json& j, const std::string& key, T& out, const std::string& where) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

Range range_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(where + ": expected [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

json range3_json(const Range3& r) { return {{"z", range_json(r.z)}, {"y", range_json(r.y)}, {"x", range_json(r.x)}}; }

Range3 range3_from(const json& j, const std::string& where) {
  check_keys(j, {"z", "y", "x"}, where, true);
  return {range_from(j["z"], where + ".z"), range_from(j["y"], where + ".y"), range_from(j["x"], where + ".x")};
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  weights.validate();
  ftl.validate();
  if (optimizer.type != "adam") throw ConfigError("optimizer.type must be \"adam\"");
  if (!(optimizer.lr_g > 0.0) || !(optimizer.lr_d > 0.0)) throw ConfigError("learning rates must be > 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
  if (optimizer.grad_clip < 0.0) throw ConfigError("optimizer.grad_clip must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("ratio must lie in [0, 1]");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (!(synth_tau > 0.0)) throw ConfigError("synth_tau must be > 0");
  if (checkpoint_every < 0 || eval_every < 0) throw ConfigError("cadences must be >= 0");
}

json to_json(const RunConfig& c) {
  return {
      {"model",
       {{"patch_size", c.model.patch_size},
        {"channels", c.model.channels},
        {"latent_dim", c.model.latent_dim},
        {"disc_channels", c.model.disc_channels},
        {"seed", c.model.seed}}},
      {"loss_weights",
       {{"rec", c.weights.rec}, {"perc", c.weights.perc}, {"kl", c.weights.kl}, {"seg", c.weights.seg},
        {"adv", c.weights.adv}}},
      {"ftl", {{"alpha", c.ftl.alpha}, {"beta", c.ftl.beta}, {"gamma", c.ftl.gamma}, {"smooth", c.ftl.smooth}}},
      {"optimizer",
       {{"type", c.optimizer.type},
        {"lr_g", c.optimizer.lr_g},
        {"lr_d", c.optimizer.lr_d},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"grad_clip", c.optimizer.grad_clip}}},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"ratio", c.ratio},
      {"warmup_epochs", c.warmup_epochs},
      {"synth_tau", c.synth_tau},
      {"synthetic_mode", c.synthetic_mode == SyntheticMode::Live ? "live" : "frozen_bank"},
      {"seeds", {{"data", c.seeds.data}, {"noise", c.seeds.noise}}},
      {"checkpoint_every", c.checkpoint_every},
      {"eval_every", c.eval_every},
  };
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j,
             {"model", "loss_weights", "ftl", "optimizer", "batch_size", "epochs", "ratio", "warmup_epochs",
              "synth_tau", "synthetic_mode", "seeds", "checkpoint_every", "eval_every"},
             "config", true);
  RunConfig c;
  const auto& m = j["model"];
  check_keys(m, {"patch_size", "channels", "latent_dim", "disc_channels", "seed"}, "model", true);
  c.model.patch_size = get<int>(m, "patch_size", "model");
  c.model.channels = get<std::vector<int>>(m, "channels", "model");
  c.model.latent_dim = get<int>(m, "latent_dim", "model");
  c.model.disc_channels = get<std::vector<int>>(m, "disc_channels", "model");
  c.model.seed = get<std::uint64_t>(m, "seed", "model");

  const auto& w = j["loss_weights"];
  check_keys(w, {"rec", "perc", "kl", "seg", "adv"}, "loss_weights", true);
  c.weights = {get<double>(w, "rec", "loss_weights"), get<double>(w, "perc", "loss_weights"),
               get<double>(w, "kl", "loss_weights"), get<double>(w, "seg", "loss_weights"),
               get<double>(w, "adv", "loss_weights")};

  const auto& f = j["ftl"];
  check_keys(f, {"alpha", "beta", "gamma", "smooth"}, "ftl", true);
  c.ftl = {get<double>(f, "alpha", "ftl"), get<double>(f, "beta", "ftl"), get<double>(f, "gamma", "ftl"),
           get<double>(f, "smooth", "ftl")};

  const auto& o = j["optimizer"];
  check_keys(o, {"type", "lr_g", "lr_d", "beta1", "beta2", "eps", "grad_clip"}, "optimizer", true);
  c.optimizer.type = get<std::string>(o, "type", "optimizer");
  c.optimizer.lr_g = get<double>(o, "lr_g", "optimizer");
  c.optimizer.lr_d = get<double>(o, "lr_d", "optimizer");
  c.optimizer.beta1 = get<double>(o, "beta1", "optimizer");
  c.optimizer.beta2 = get<double>(o, "beta2", "optimizer");
  c.optimizer.eps = get<double>(o, "eps", "optimizer");
  c.optimizer.grad_clip = get<double>(o, "grad_clip", "optimizer");

  c.batch_size = get<int>(j, "batch_size", "config");
  c.epochs = get<int>(j, "epochs", "config");
  c.ratio = get<double>(j, "ratio", "config");
  c.warmup_epochs = get<int>(j, "warmup_epochs", "config");
  c.synth_tau = get<double>(j, "synth_tau", "config");
  const auto mode = get<std::string>(j, "synthetic_mode", "config");
  if (mode == "live") c.synthetic_mode = SyntheticMode::Live;
  else if (mode == "frozen_bank") c.synthetic_mode = SyntheticMode::FrozenBank;
  else throw ConfigError("synthetic_mode must be \"live\" or \"frozen_bank\"");

  const auto& s = j["seeds"];
  check_keys(s, {"data", "noise"}, "seeds", true);
  c.seeds.data = get<std::uint64_t>(s, "data", "seeds");
  c.seeds.noise = get<std::uint64_t>(s, "noise", "seeds");
  c.checkpoint_every = get<int>(j, "checkpoint_every", "config");
  c.eval_every = get<int>(j, "eval_every", "config");
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config parse error: " + std::string(e.what()));
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << to_json(c).dump(2) << '\n';
}

std::string canonical_json(const RunConfig& c) { return to_json(c).dump(); }

std::uint64_t config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_json(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json to_json(const PhantomSpec& s) {
  json organs = json::array();
  for (const auto& o : s.organs)
    organs.push_back({{"name", o.name},
                      {"center", range3_json(o.center)},
                      {"radii", range3_json(o.radii)},
                      {"intensity_offset", range_json(o.intensity_offset)},
                      {"target", o.target}});
  return {{"dims", {s.dims.nz, s.dims.ny, s.dims.nx}},
          {"spacing", {s.spacing.sz, s.spacing.sy, s.spacing.sx}},
          {"background", range_json(s.background)},
          {"organs", organs},
          {"max_target_fraction", s.max_target_fraction},
          {"noise_std", s.noise_std},
          {"seed", s.seed}};
}

PhantomSpec phantom_spec_from_json(const json& j) {
  check_keys(j, {"dims", "spacing", "background", "organs", "max_target_fraction", "noise_std", "seed"}, "phantom",
             false);
  PhantomSpec s = default_phantom_spec();
  if (j.contains("dims")) {
    const auto d = get<std::vector<int>>(j, "dims", "phantom");
    if (d.size() != 3) throw ConfigError("phantom.dims: expected [nz, ny, nx]");
    s.dims = {d[0], d[1], d[2]};
  }
  if (j.contains("spacing")) {
    const auto sp = get<std::vector<float>>(j, "spacing", "phantom");
    if (sp.size() != 3) throw ConfigError("phantom.spacing: expected [sz, sy, sx]");
    s.spacing = {sp[0], sp[1], sp[2]};
  }
  if (j.contains("background")) s.background = range_from(j["background"], "phantom.background");
  if (j.contains("organs")) {
    s.organs.clear();
    for (const auto& o : j["organs"]) {
      check_keys(o, {"name", "center", "radii", "intensity_offset", "target"}, "phantom.organs[]", true);
      s.organs.push_back({get<std::string>(o, "name", "organ"), range3_from(o["center"], "organ.center"),
                          range3_from(o["radii"], "organ.radii"),
                          range_from(o["intensity_offset"], "organ.intensity_offset"), get<bool>(o, "target", "organ")});
    }
  }
  maybe(j, "max_target_fraction", s.max_target_fraction, "phantom");
  maybe(j, "noise_std", s.noise_std, "phantom");
  maybe(j, "seed", s.seed, "phantom");
  return s;
}

}  // namespace pgvae
