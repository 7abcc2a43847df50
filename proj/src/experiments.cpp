#include "pgvae/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "pgvae/binary_io.hpp"

namespace pgvae {

using nlohmann::json;

namespace {

std::string fmt(const char* spec, double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

json row_json(const metrics::MetricRow& r) {
  return json::array({number(r.mse), number(r.mae), number(r.rmse), number(r.psnr), number(r.ssim), number(r.dice),
                      number(r.iou), number(r.precision), number(r.recall), number(r.hausdorff)});
}

metrics::MetricRow row_from(const json& j) {
  if (!j.is_array() || j.size() != 10) throw FormatError("sweep.json: metric row must have 10 entries");
  return {number_from(j[0]), number_from(j[1]), number_from(j[2]), number_from(j[3]), number_from(j[4]),
          number_from(j[5]), number_from(j[6]), number_from(j[7]), number_from(j[8]), number_from(j[9])};
}

std::string sample_name(std::size_t i, const char* what) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "sample-%02zu-%s", i, what);
  return buf;
}

}  // namespace

std::string ratio_dir_name(double ratio) { return "ratio-" + fmt("%g", ratio); }

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double r = 0.0;
    try {
      r = std::stod(item, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad ratio '" + item + "'");
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    if (used != item.size()) throw std::invalid_argument("bad ratio '" + item + "'");
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("ratio " + item + " outside [0, 1]");
    out.push_back(r);
  }
  if (out.empty()) throw std::invalid_argument("empty ratio list");
  return out;
}

SweepResult ratio_sweep(const RunConfig& base, std::span<const double> ratios, std::span<const PatchPair> train_set,
                        std::span<const PatchPair> eval, const FeatureExtractor<float>& extractor,
                        const SweepOptions& opts) {
  if (ratios.empty()) throw std::invalid_argument("ratio_sweep: no ratios");
  if (eval.empty()) throw std::invalid_argument("ratio_sweep: empty evaluation set");
  base.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SweepResult s;
  s.base = base;
  s.config_hash = config_hash(base);
  for (double r : ratios) {
    RunConfig cfg = base;
    cfg.ratio = r;
    cfg.validate();
    TrainState state(cfg);
    TrainOptions topts;
    if (!opts.out_dir.empty()) topts.out_dir = opts.out_dir / ratio_dir_name(r);
    topts.eval_patches = eval;
    topts.keep_samples = opts.keep_samples;
    TrainResult res = train(state, train_set, extractor, topts);
    RatioRun run;
    run.ratio = r;
    run.report = std::move(res.evaluations.back().second);
    run.samples = std::move(res.samples);
    run.log = std::move(res.log);
    run.synthetic_calls = res.synthetic_calls;
    s.runs.push_back(std::move(run));
  }
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!opts.out_dir.empty()) save_sweep(s, opts.out_dir);
  return s;
}

void save_sweep(const SweepResult& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json runs = json::array();
  for (const auto& run : s.runs) {
    json rows = json::array();
    for (const auto& r : run.report.rows) rows.push_back(row_json(r));
    runs.push_back({{"ratio", run.ratio},
                    {"dir", ratio_dir_name(run.ratio)},
                    {"synthetic_calls", run.synthetic_calls},
                    {"samples", run.samples.size()},
                    {"rows", rows}});
    const auto sdir = dir / ratio_dir_name(run.ratio) / "samples";
    std::filesystem::create_directories(sdir);
    for (std::size_t i = 0; i < run.samples.size(); ++i) {
      save_patch(run.samples[i].input, sdir / (sample_name(i, "input") + ".pgpp"));
      save_patch(run.samples[i].prediction, sdir / (sample_name(i, "pred") + ".pgpp"));
    }
  }
  const json j = {{"config", to_json(s.base)},
                  {"config_hash", s.config_hash},
                  {"seeds", {{"model", s.base.model.seed}, {"data", s.base.seeds.data}, {"noise", s.base.seeds.noise}}},
                  {"wall_seconds", s.wall_seconds},
                  {"runs", runs}};
  std::ofstream os(dir / "sweep.json");
  if (!os) throw std::runtime_error("cannot write " + (dir / "sweep.json").string());
  os << j.dump(2) << '\n';
}

SweepResult load_sweep(const std::filesystem::path& dir) {
  std::ifstream is(dir / "sweep.json");
  if (!is) throw std::runtime_error("cannot open " + (dir / "sweep.json").string());
  SweepResult s;
  try {
    const json j = json::parse(is);
    s.base = run_config_from_json(j.at("config"));
    s.config_hash = j.at("config_hash").get<std::uint64_t>();
    s.wall_seconds = j.at("wall_seconds").get<double>();
    for (const auto& jr : j.at("runs")) {
      RatioRun run;
      run.ratio = jr.at("ratio").get<double>();
      run.synthetic_calls = jr.at("synthetic_calls").get<std::uint64_t>();
      run.report.ratio = run.ratio;
      for (const auto& row : jr.at("rows")) run.report.rows.push_back(row_from(row));
      metrics::aggregate(run.report);
      const auto sdir = dir / jr.at("dir").get<std::string>() / "samples";
      const auto n = jr.at("samples").get<std::size_t>();
      for (std::size_t i = 0; i < n; ++i)
        run.samples.push_back({load_patch(sdir / (sample_name(i, "input") + ".pgpp")),
                               load_patch(sdir / (sample_name(i, "pred") + ".pgpp"))});
      s.runs.push_back(std::move(run));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("sweep.json: ") + e.what());
  }
  if (s.config_hash != config_hash(s.base)) throw FormatError("sweep.json: config hash does not match its config");
  return s;
}

std::string reconstruction_table_csv(const SweepResult& s) {
  std::string out = std::string(kReconstructionHeader) + "\n";
  for (const auto& run : s.runs) {
    const auto& m = run.report.mean;
    out += fmt("%g", run.ratio) + "," + fmt("%.6f", m.mse) + "," + fmt("%.5f", m.mae) + "," + fmt("%.5f", m.rmse) +
           "," + fmt("%.2f", m.psnr) + "," + fmt("%.4f", m.ssim) + "\n";
  }
  return out;
}

std::string segmentation_table_csv(const SweepResult& s) {
  std::string out = std::string(kSegmentationHeader) + "\n";
  for (const auto& run : s.runs) {
    const auto& m = run.report.mean;
    out += fmt("%g", run.ratio) + "," + fmt("%.4f", m.dice) + "," + fmt("%.4f", m.iou) + "," +
           fmt("%.4f", m.precision) + "," + fmt("%.4f", m.recall) + "," + fmt("%.2f", m.hausdorff) + "\n";
  }
  return out;
}

std::string text_table(const std::string& csv) {
  std::vector<std::vector<std::string>> cells;
  std::stringstream lines(csv);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(cell);
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> width;
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], row[c].size());
    }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c) out += "  ";
      out += std::string(width[c] - cells[r][c].size(), ' ') + cells[r][c];
    }
    out += '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
      out += std::string(total, '-') + '\n';
    }
  }
  return out;
}

RgbImage render_panel(const PanelSample& sample) {
  const PatchPair& in = sample.input;
  const PatchPair& pred = sample.prediction;
  if (in.size != pred.size || in.image.size() != pred.image.size())
    throw std::invalid_argument("render_panel: input and prediction sizes differ");
  constexpr int kGap = 2;
  const int ps = in.size;
  RgbImage img(5 * ps + 4 * kGap, ps);
  auto gray = [](std::uint8_t g) { return std::array<std::uint8_t, 3>{g, g, g}; };
  for (int y = 0; y < ps; ++y) {
    for (int x = 0; x < ps; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * ps + x;
      const std::array<std::array<std::uint8_t, 3>, 5> tiles = {
          gray(gray_level(in.image[i])),
          gray(gray_level(pred.image[i])),
          heat_color(static_cast<double>(pred.image[i]) - in.image[i]),
          gray(pred.mask[i] ? 255 : 0),
          gray(in.mask[i] ? 255 : 0),
      };
      for (int t = 0; t < 5; ++t) img.set(y, t * (ps + kGap) + x, tiles[t]);
    }
  }
  return img;
}

void render_report(const SweepResult& s, const std::filesystem::path& out_dir) {
  if (s.runs.empty()) throw std::invalid_argument("render_report: empty sweep");
  std::filesystem::create_directories(out_dir);
  auto write_text = [&](const char* name, const std::string& text) {
    std::ofstream os(out_dir / name, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + (out_dir / name).string());
    os << text;
  };
  const std::string rec = reconstruction_table_csv(s);
  const std::string seg = segmentation_table_csv(s);
  write_text("reconstruction.csv", rec);
  write_text("segmentation.csv", seg);
  write_text("reconstruction.txt", text_table(rec));
  write_text("segmentation.txt", text_table(seg));

  for (const auto& run : s.runs) {
    const auto pdir = out_dir / "panels" / ratio_dir_name(run.ratio);
    std::filesystem::create_directories(pdir);
    for (std::size_t i = 0; i < run.samples.size(); ++i) {
      const auto& smp = run.samples[i];
      const int ps = smp.input.size;
      std::vector<std::uint8_t> g(smp.input.image.size());
      auto gray_tile = [&](const char* what, auto&& level) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] = level(k);
        write_pgm(pdir / (sample_name(i, what) + ".pgm"), ps, ps, g);
      };
      gray_tile("input", [&](std::size_t k) { return gray_level(smp.input.image[k]); });
      gray_tile("recon", [&](std::size_t k) { return gray_level(smp.prediction.image[k]); });
      gray_tile("pred_mask", [&](std::size_t k) { return static_cast<std::uint8_t>(smp.prediction.mask[k] ? 255 : 0); });
      gray_tile("gt_mask", [&](std::size_t k) { return static_cast<std::uint8_t>(smp.input.mask[k] ? 255 : 0); });
      RgbImage heat(ps, ps);
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x) {
          const std::size_t k = static_cast<std::size_t>(y) * ps + x;
          heat.set(y, x, heat_color(static_cast<double>(smp.prediction.image[k]) - smp.input.image[k]));
        }
      write_ppm(pdir / (sample_name(i, "error") + ".ppm"), heat);
      write_ppm(pdir / (sample_name(i, "panel") + ".ppm"), render_panel(smp));
    }
  }
}

}  // namespace pgvae
