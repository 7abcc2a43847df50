#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "pgvae/config.hpp"
#include "pgvae/dataset.hpp"
#include "pgvae/experiments.hpp"
#include "pgvae/training.hpp"

namespace fs = std::filesystem;
using namespace pgvae;

namespace {

constexpr const char* kMaskSuffix = ".mask.pgpv";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string numbered(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%03zu%s", stem, i, ext);
  return buf;
}

/// Patch files if the directory has any, otherwise volume/mask pairs cut into
/// patches with the default dataset options.
std::vector<PatchPair> load_data_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
  auto patches = load_patch_dir(dir);
  if (!patches.empty()) return patches;
  std::vector<fs::path> volumes;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (ends_with(name, ".pgpv") && !ends_with(name, kMaskSuffix)) volumes.push_back(e.path());
  }
  std::sort(volumes.begin(), volumes.end());
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    fs::path mask_path = volumes[i];
    mask_path.replace_extension(kMaskSuffix);
    if (!fs::exists(mask_path)) throw std::runtime_error("missing mask " + mask_path.string());
    auto found = patches_from_volume(load_volume(volumes[i]), load_mask(mask_path), static_cast<int>(i), {});
    for (auto& p : found) patches.push_back(std::move(p));
  }
  if (patches.empty()) throw std::runtime_error("no patches or volumes found in " + dir.string());
  return patches;
}

/// Holds out the patches of the last fifth of source volumes (at least one).
std::pair<std::vector<PatchPair>, std::vector<PatchPair>> holdout_split(std::vector<PatchPair> all) {
  std::set<int> ids;
  for (const auto& p : all) ids.insert(p.source.volume_id);
  if (ids.size() < 2) throw std::runtime_error("need patches from at least two volumes, or pass --eval-data");
  const std::size_t n_eval = std::max<std::size_t>(1, ids.size() / 5);
  std::set<int> eval_ids(std::prev(ids.end(), static_cast<long>(n_eval)), ids.end());
  std::vector<PatchPair> train, eval;
  for (auto& p : all) (eval_ids.count(p.source.volume_id) ? eval : train).push_back(std::move(p));
  return {std::move(train), std::move(eval)};
}

void print_report(const metrics::MetricReport& r) {
  const auto& m = r.mean;
  std::printf("ratio %g  patches %zu  MSE %.6f  PSNR %.2f  SSIM %.4f  Dice %.4f  IoU %.4f  HD %.2f\n", r.ratio,
              r.patch_count(), m.mse, m.psnr, m.ssim, m.dice, m.iou, m.hausdorff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-guided patch UNet-VAE toolkit"};
  app.require_subcommand(1);

  auto* phantom = app.add_subcommand("phantom", "Synthetic CT phantoms");
  phantom->require_subcommand(1);
  auto* gen = phantom->add_subcommand("generate", "Write phantom volumes and target masks");
  fs::path spec_path, gen_out;
  int count = 1;
  gen->add_option("--spec", spec_path, "Phantom spec JSON (missing keys use defaults)")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", count, "Number of volumes")->check(CLI::PositiveNumber);

  auto* loc = app.add_subcommand("localize", "Cut prompt-localized patches from one volume");
  fs::path vol_path, mask_path, loc_out;
  std::string prompt = "adrenal gland", roi_source = "prompt";
  DatasetOptions dopts;
  loc->add_option("--volume", vol_path, "HU volume (.pgpv)")->required()->check(CLI::ExistingFile);
  loc->add_option("--mask", mask_path, "Target mask (.pgpv)")->required()->check(CLI::ExistingFile);
  loc->add_option("--prompt", prompt, "Text prompt");
  loc->add_option("--k", dopts.localizer.k, "ROIs per slice")->check(CLI::PositiveNumber);
  loc->add_option("--patch-size", dopts.localizer.patch_size, "Patch side in pixels");
  loc->add_option("--roi-source", roi_source, "prompt or centroid")->check(CLI::IsMember({"prompt", "centroid"}));
  loc->add_option("--max-patches", dopts.max_patches_per_volume, "Cap per volume");
  loc->add_option("--out", loc_out, "Output directory for .pgpp files")->required();

  auto* tr = app.add_subcommand("train", "Train one model");
  fs::path cfg_path, data_dir, eval_dir, train_out, resume;
  std::uint64_t stop_at = 0;
  tr->add_option("--config", cfg_path, "Run config JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data_dir, "Patch or volume directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--eval-data", eval_dir, "Held-out directory (default: hold out the last fifth of volumes)")
      ->check(CLI::ExistingDirectory);
  tr->add_option("--out", train_out, "Run directory")->required();
  tr->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_option("--stop-at-step", stop_at, "Stop early at this global step");

  auto* sw = app.add_subcommand("sweep", "Train one model per synthetic ratio");
  fs::path sweep_cfg, sweep_out, sweep_data, sweep_eval;
  std::string ratios = "0,0.25,0.5,0.75,1";
  PhantomDatasetSpec pds;
  std::size_t samples = 4;
  sw->add_option("--config", sweep_cfg, "Base run config JSON")->required()->check(CLI::ExistingFile);
  sw->add_option("--ratios", ratios, "Comma-separated synthetic fractions");
  sw->add_option("--out", sweep_out, "Sweep directory")->required();
  sw->add_option("--data", sweep_data, "Patch or volume directory (default: generated phantoms)")
      ->check(CLI::ExistingDirectory);
  sw->add_option("--eval-data", sweep_eval, "Held-out directory")->check(CLI::ExistingDirectory);
  sw->add_option("--train-volumes", pds.train_volumes, "Generated training volumes");
  sw->add_option("--eval-volumes", pds.eval_volumes, "Generated held-out volumes");
  sw->add_option("--phantom-seed", pds.phantom.seed, "Seed of the first generated volume");
  sw->add_option("--samples", samples, "Panel samples kept per ratio");

  auto* rep = app.add_subcommand("report", "Render tables and panels from a sweep");
  fs::path rep_in, rep_out;
  rep->add_option("--in", rep_in, "Sweep directory")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--out", rep_out, "Report directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      PhantomSpec spec = default_phantom_spec();
      if (!spec_path.empty()) {
        std::ifstream is(spec_path);
        spec = phantom_spec_from_json(nlohmann::json::parse(is));
      }
      fs::create_directories(gen_out);
      for (int i = 0; i < count; ++i) {
        PhantomSpec s = spec;
        s.seed = spec.seed + static_cast<std::uint64_t>(i);
        const auto [vol, mask] = generate_phantom(s);
        save_volume(vol, gen_out / numbered("phantom", static_cast<std::size_t>(i), ".pgpv"));
        save_volume(mask, gen_out / numbered("phantom", static_cast<std::size_t>(i), kMaskSuffix));
      }
      std::printf("wrote %d phantom volume(s) to %s\n", count, gen_out.c_str());
    } else if (loc->parsed()) {
      dopts.prompt = prompt;
      dopts.roi_source = roi_source == "prompt" ? RoiSource::Prompt : RoiSource::TargetCentroid;
      const auto patches = patches_from_volume(load_volume(vol_path), load_mask(mask_path), 0, dopts);
      fs::create_directories(loc_out);
      for (std::size_t i = 0; i < patches.size(); ++i)
        save_patch(patches[i], loc_out / numbered("patch", i, ".pgpp"));
      std::printf("wrote %zu patch(es) to %s\n", patches.size(), loc_out.c_str());
    } else if (tr->parsed()) {
      const RunConfig cfg = load_run_config(cfg_path);
      std::vector<PatchPair> train_set, eval_set;
      if (eval_dir.empty()) {
        std::tie(train_set, eval_set) = holdout_split(load_data_dir(data_dir));
      } else {
        train_set = load_data_dir(data_dir);
        eval_set = load_data_dir(eval_dir);
      }
      const ToyPerceptualExtractor<float> extractor;
      TrainState state = resume.empty() ? TrainState(cfg) : load_checkpoint(resume, cfg, extractor);
      fs::create_directories(train_out);
      save_run_config(cfg, train_out / "config.json");
      TrainOptions topts;
      topts.out_dir = train_out;
      topts.stop_at_step = stop_at;
      topts.eval_patches = eval_set;
      const auto res = train(state, train_set, extractor, topts);
      std::printf("trained %zu step(s) on %zu patches, now at step %llu\n", res.log.size(), train_set.size(),
                  static_cast<unsigned long long>(state.step));
      for (const auto& [epoch, report] : res.evaluations) print_report(report);
    } else if (sw->parsed()) {
      const RunConfig cfg = load_run_config(sweep_cfg);
      const auto rs = parse_ratios(ratios);
      std::vector<PatchPair> train_set, eval_set;
      if (!sweep_data.empty()) {
        if (sweep_eval.empty()) {
          std::tie(train_set, eval_set) = holdout_split(load_data_dir(sweep_data));
        } else {
          train_set = load_data_dir(sweep_data);
          eval_set = load_data_dir(sweep_eval);
        }
      } else {
        auto ds = build_phantom_dataset(pds);
        train_set = std::move(ds.train);
        eval_set = std::move(ds.eval);
      }
      const ToyPerceptualExtractor<float> extractor;
      const auto result = ratio_sweep(cfg, rs, train_set, eval_set, extractor, {sweep_out, samples});
      for (const auto& run : result.runs) print_report(run.report);
      std::printf("sweep written to %s (%.1f s)\n", sweep_out.c_str(), result.wall_seconds);
    } else if (rep->parsed()) {
      const auto s = load_sweep(rep_in);
      render_report(s, rep_out);
      std::cout << text_table(reconstruction_table_csv(s)) << '\n' << text_table(segmentation_table_csv(s));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
