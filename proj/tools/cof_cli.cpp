#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cof/eval/evaluate.hpp"
#include "cof/io/synth.hpp"
#include "cof/training/trainer.hpp"

using namespace cof;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_file;
  std::string profile = "toy";
  std::int64_t seed = -1;
  std::vector<std::string> sets;
  bool quiet = false;
};

training::Config build_config(const Globals& g) {
  auto c = training::Config::for_profile(g.profile);
  if (!g.config_file.empty()) training::apply_config_file(c, g.config_file);
  for (auto& kv : g.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidInput("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed >= 0) c.train.seed = static_cast<std::uint64_t>(g.seed);
  c.validate();
  return c;
}

Shape batch_of_one(Shape s) {
  s.insert(s.begin(), 1);
  return s;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  io::detail::atomic_write(p, text);
}

// Mask [R,F] as an 8-bit grayscale image, low frequencies at the bottom.
void write_mask_png(const fs::path& p, const Tensor<float>& m) {
  const auto R = m.dim(0), F = m.dim(1);
  Tensor<float> img({1, R, F});
  for (std::int64_t r = 0; r < R; ++r)
    for (std::int64_t f = 0; f < F; ++f) img[(R - 1 - r) * F + f] = m[r * F + f];
  io::write_png(p, io::tensor_to_image(img));
}

void progress(const Globals& g, std::int64_t it, std::int64_t total, double loss) {
  if (g.quiet) return;
  if (it % 50 == 0 || it + 1 == total) std::fprintf(stderr, "iter %lld/%lld loss %.6f\n",
                                                    static_cast<long long>(it), static_cast<long long>(total), loss);
}

// ---- subcommands ----

struct SynthArgs {
  fs::path out;
  int videos = 50, categories = 5;
  io::SynthOptions opt;
  bool no_flows = false;
};

int run_generate(const Globals& g, const SynthArgs& a) {
  const auto cfg = build_config(g);
  auto o = a.opt;
  o.flows = !a.no_flows;
  const auto m = io::generate_synthetic(a.out, a.videos, a.categories, cfg.train.seed, o);
  std::cout << "wrote " << m.entries.size() << " videos to " << (a.out / "manifest.jsonl").string() << "\n";
  return 0;
}

struct TrainArgs {
  fs::path data, out, resume, cof;
  std::int64_t stop_after = -1;
};

int run_train(const Globals& g, const TrainArgs& a) {
  const auto cfg = build_config(g);
  training::VideoStore store(io::load_manifest(a.data), cfg, cfg.model.needs_flows());
  training::TrainOptions o;
  o.resume = a.resume;
  o.stop_after = a.stop_after;
  o.on_iteration = [&](std::int64_t it, double l) { progress(g, it, cfg.train.iters, l); };
  const auto r = training::train_cof(cfg, store, a.out, o);
  write_text(a.out / "config.txt", training::config_text(cfg));
  std::cout << "checkpoint " << r.checkpoint.string() << "\nloss log " << r.loss_log.string() << "\n";
  return 0;
}

int run_train_sslm(const Globals& g, const TrainArgs& a) {
  auto cfg = build_config(g);
  const auto cof_cfg = training::load_cof(a.cof).config;
  // Data settings follow the separation model; localizer settings come from the command line.
  cfg.audio = cof_cfg.audio;
  cfg.video = cof_cfg.video;
  cfg.model = cof_cfg.model;
  training::VideoStore store(io::load_manifest(a.data), cfg, cfg.model.needs_flows());
  training::TrainOptions o;
  o.stop_after = a.stop_after;
  o.on_iteration = [&](std::int64_t it, double l) { progress(g, it, cfg.sslm.iters, l); };
  const auto r = training::train_sslm(cfg, a.cof, store, a.out, o);
  std::cout << "checkpoint " << r.checkpoint.string() << "\nloss log " << r.loss_log.string() << "\n";
  return 0;
}

struct EvalArgs {
  fs::path data, model, sslm, out;
  std::vector<int> stages;
  std::vector<std::string> pairwise;
  int mixtures = -1, sources = 2, filter_len = -1;
  std::string split = "test";
  bool json = false;
};

int run_evaluate(const Globals& g, const EvalArgs& a) {
  const auto loaded = training::load_cof(a.model);
  auto cfg = loaded.config;
  const auto over = build_config(g);
  eval::EvalOptions o;
  o.sources = a.sources;
  o.split = a.split;
  o.mixtures = a.mixtures >= 0 ? a.mixtures : over.eval.mixtures;
  o.filter_len = a.filter_len > 0 ? a.filter_len : over.eval.filter_len;
  o.seed = over.eval.seed;
  int top = 0;
  for (int s : a.stages) {
    if (s < 1 || s > loaded.model->stage_count())
      throw InvalidInput("--stages " + std::to_string(s) + " is outside 1.." + std::to_string(loaded.model->stage_count()));
    top = std::max(top, s);
  }
  o.stages = top;
  std::unique_ptr<training::LoadedSslm> loc;
  if (!a.sslm.empty()) {
    loc = std::make_unique<training::LoadedSslm>(training::load_sslm(a.sslm));
    o.localizer = loc->net.get();
  }
  training::VideoStore store(io::load_manifest(a.data), cfg, cfg.model.needs_flows());
  auto rep = eval::evaluate_model(*loaded.model, cfg, store, o);
  if (!a.stages.empty()) {
    std::vector<eval::EvalRow> keep;
    for (auto& r : rep.rows) {
      bool ok = r.stage.rfind("stage", 0) != 0;
      for (int s : a.stages) ok = ok || r.stage == "stage" + std::to_string(s);
      if (ok) keep.push_back(r);
    }
    rep.rows = std::move(keep);
  }
  if (!a.out.empty()) {
    write_text(a.out, eval::report_csv(rep));
    auto js = a.out;
    js.replace_extension(".json");
    write_text(js, eval::report_summary_json(rep).dump(2) + "\n");
  }
  std::cout << rep.mixtures << " mixtures\n" << eval::report_table(rep.summaries());
  for (auto& label : a.pairwise) {
    const auto pm = eval::pairwise_matrix(rep, store.manifest().categories(), label);
    std::cout << "\nmean SDR by category pair (" << label << ")\n" << eval::pairwise_table(pm);
  }
  return 0;
}

struct SeparateArgs {
  fs::path model, sslm, mixture, out;
  std::vector<fs::path> frames, flows;
  std::int64_t start = 0;
};

int run_separate(const Globals&, const SeparateArgs& a) {
  const auto loaded = training::load_cof(a.model);
  const auto& cfg = loaded.config;
  const bool need_flows = cfg.model.needs_flows();
  if (a.frames.size() < 2) throw InvalidInput("separate needs at least two --frames directories");
  if (need_flows && a.flows.size() != a.frames.size())
    throw InvalidInput("this model needs one --flows file per --frames directory");
  const std::int64_t L = cfg.audio.clip_samples();
  const auto full = audio::load_audio(a.mixture, cfg.audio.sample_rate, false);
  const auto offset = static_cast<std::int64_t>(std::llround(static_cast<double>(a.start) * cfg.audio.sample_rate / cfg.video.fps));
  const auto mixture = training::crop_audio(full, offset, L);
  const auto spec = audio::stft(mixture, cfg.audio.window, cfg.audio.hop);
  const auto warped = audio::log_warp(spec.magnitude(), cfg.audio.rows);
  Tensor<float> mix({1, warped.rows(), warped.frames()});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = static_cast<float>(warped.mags[i]);
  std::vector<vision::Clip<float>> clips;
  for (std::size_t n = 0; n < a.frames.size(); ++n) {
    io::ManifestEntry e;
    e.id = "source" + std::to_string(n);
    e.frame_dir = a.frames[n];
    if (need_flows) e.flow_path = a.flows[n];
    const auto v = training::load_video(e, cfg.video.frame_size, cfg.audio.sample_rate, need_flows);
    Tensor<float> fr, fl;
    training::clip_tensors(v, a.start, cfg, training::FrameWarp{}, fr, fl);
    vision::Clip<float> c{Var<float>(fr.reshaped(batch_of_one(fr.shape()))), {}};
    if (fl.rank() == 4) c.flows = Var<float>(fl.reshaped(batch_of_one(fl.shape())));
    clips.push_back(std::move(c));
  }
  NoGradGuard ng;
  std::unique_ptr<training::LoadedSslm> loc;
  if (!a.sslm.empty()) {
    loc = std::make_unique<training::LoadedSslm>(training::load_sslm(a.sslm));
    clips = training::mask_clips(*loc->net, clips);
  }
  fs::create_directories(a.out);
  const auto outs = loaded.model->forward(mix, clips);
  for (auto& so : outs)
    for (std::size_t n = 0; n < so.mask.size(); ++n) {
      const auto stem = "stage" + std::to_string(so.stage) + "_source" + std::to_string(n + 1);
      const Tensor<float> m = so.mask[n].reshaped({warped.rows(), warped.frames()});
      audio::write_wav(a.out / (stem + ".wav"), audio::reconstruct(eval::mask_from(m, warped), spec, L));
      write_mask_png(a.out / (stem + "_mask.png"), m);
    }
  std::cout << "wrote " << 2 * outs.size() * a.frames.size() << " files to " << a.out.string() << "\n";
  return 0;
}

struct LocalizeArgs {
  fs::path sslm, frame, out;
};

int run_localize(const Globals&, const LocalizeArgs& a) {
  const auto loc = training::load_sslm(a.sslm);
  const auto img = io::read_png_rgb(a.frame);
  const int S = loc.config.video.frame_size;
  auto t = io::image_to_tensor<float>(img);
  const int H = static_cast<int>(t.dim(1)), W = static_cast<int>(t.dim(2));
  Tensor<float> x({1, 3, S, S}, training::resize_area(t.data(), 3, H, W, S));
  NoGradGuard ng;
  const auto m = loc.net->forward(Var<float>(x)).value();
  Tensor<float> small({1, S, S}, std::vector<float>(m.data(), m.data() + m.size()));
  // Back to the input resolution with nearest-neighbour lookup.
  Tensor<float> out({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      out[static_cast<std::size_t>(y) * W + xx] = small[static_cast<std::size_t>(y * S / H) * S + xx * S / W];
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  io::write_png(a.out, io::tensor_to_image(out));
  double mean = 0;
  for (std::size_t i = 0; i < m.size(); ++i) mean += m[i];
  std::printf("mask mean %.4f\n", mean / static_cast<double>(m.size()));
  return 0;
}

struct ReportArgs {
  fs::path csv, plot;
};

std::string svg_bars(const std::vector<eval::EvalSummary>& rows) {
  const int bar = 48, gap = 24, height = 240, left = 50, top = 20;
  double hi = 1, lo = 0;
  for (auto& r : rows)
    if (std::abs(r.sdr) < eval::kInfiniteDb) hi = std::max(hi, r.sdr), lo = std::min(lo, r.sdr);
  const double span = hi - lo;
  const int width = left + static_cast<int>(rows.size()) * (bar + gap) + gap;
  auto y_of = [&](double v) { return top + height * (hi - std::clamp(v, lo, hi)) / span; };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height + top + 40
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"4\" y=\"14\">mean SDR (dB)</text>\n";
  s << "<line x1=\"" << left << "\" x2=\"" << width << "\" y1=\"" << y_of(0) << "\" y2=\"" << y_of(0)
    << "\" stroke=\"#444\"/>\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double x = left + gap + static_cast<double>(i) * (bar + gap);
    const double y0 = y_of(0), y1 = y_of(rows[i].sdr);
    s << "<rect x=\"" << x << "\" y=\"" << std::min(y0, y1) << "\" width=\"" << bar << "\" height=\""
      << std::abs(y1 - y0) << "\" fill=\"#4a7ab5\"/>\n";
    char v[32];
    std::snprintf(v, sizeof v, "%.2f", rows[i].sdr);
    s << "<text x=\"" << x << "\" y=\"" << std::min(y0, y1) - 3 << "\">" << v << "</text>\n";
    s << "<text x=\"" << x << "\" y=\"" << height + top + 16 << "\">" << rows[i].stage << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

int run_report(const Globals&, const ReportArgs& a) {
  const auto rows = eval::summaries_from_csv([&] { const auto b = io::detail::read_all(a.csv); return std::string(b.begin(), b.end()); }());
  std::cout << eval::report_table(rows);
  if (!a.plot.empty()) write_text(a.plot, svg_bars(rows));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded opponent filter: audio-visual sound separation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "Flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--profile", g.profile, "Preset to start from")->check(CLI::IsMember({"toy", "paper"}));
  app.add_option("--seed", g.seed, "Random seed (train.seed)")->check(CLI::NonNegativeNumber);
  app.add_option("--set", g.sets, "Override a config key: key=value (repeatable)");
  app.add_flag("--quiet", g.quiet, "No progress output");

  SynthArgs synth;
  auto* gen = app.add_subcommand("generate-synth", "Write the synthetic moving-shapes corpus");
  gen->add_option("--out", synth.out, "Output directory")->required();
  gen->add_option("--videos", synth.videos, "Number of videos");
  gen->add_option("--categories", synth.categories, "Number of categories");
  gen->add_option("--size", synth.opt.size, "Frame size in pixels");
  gen->add_option("--seconds", synth.opt.seconds, "Video length");
  gen->add_option("--test-fraction", synth.opt.test_fraction, "Share of each category held out for testing");
  gen->add_flag("--static-control", synth.opt.static_control, "Make the last category a motionless control");
  gen->add_flag("--no-flows", synth.no_flows, "Skip the flow fields");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the separation cascade");
  train->add_option("--data", tr.data, "Manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--out", tr.out, "Run directory")->required();
  train->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--stop-after", tr.stop_after, "Stop after this many iterations");

  TrainArgs ts;
  auto* tsslm = app.add_subcommand("train-sslm", "Train the sound source location mask against a frozen cascade");
  tsslm->add_option("--data", ts.data, "Manifest")->required()->check(CLI::ExistingFile);
  tsslm->add_option("--cof", ts.cof, "Separation checkpoint")->required()->check(CLI::ExistingFile);
  tsslm->add_option("--out", ts.out, "Run directory")->required();
  tsslm->add_option("--stop-after", ts.stop_after, "Stop after this many iterations");

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on test mixtures");
  evaluate->add_option("--data", ev.data, "Manifest")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--model", ev.model, "Separation checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--stages", ev.stages, "Stages to report (repeatable or comma separated)")->delimiter(',');
  evaluate->add_option("--sslm", ev.sslm, "Localizer checkpoint; clips are masked first")->check(CLI::ExistingFile);
  evaluate->add_option("--out", ev.out, "Per-source CSV (a summary JSON is written next to it)");
  evaluate->add_option("--mixtures", ev.mixtures, "Number of test mixtures (0: all pairs)");
  evaluate->add_option("--sources", ev.sources, "Sources per mixture");
  evaluate->add_option("--filter-len", ev.filter_len, "BSS-eval distortion filter length");
  evaluate->add_option("--split", ev.split, "Manifest split")->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--pairwise", ev.pairwise, "Print the category-pair SDR matrix for these labels");

  SeparateArgs sp;
  auto* separate = app.add_subcommand("separate", "Separate one mixture given one frame directory per source");
  separate->add_option("--model", sp.model, "Separation checkpoint")->required()->check(CLI::ExistingFile);
  separate->add_option("--mixture", sp.mixture, "Mixture WAV")->required()->check(CLI::ExistingFile);
  separate->add_option("--frames", sp.frames, "Frame directory per source (repeatable)")->required()->check(CLI::ExistingDirectory);
  separate->add_option("--flows", sp.flows, "Flow tensor file per source (repeatable)")->check(CLI::ExistingFile);
  separate->add_option("--start", sp.start, "First frame of the clip");
  separate->add_option("--sslm", sp.sslm, "Localizer checkpoint")->check(CLI::ExistingFile);
  separate->add_option("--out", sp.out, "Output directory")->required();

  LocalizeArgs lc;
  auto* localize = app.add_subcommand("localize", "Predict the sound source location mask of a frame");
  localize->add_option("--sslm", lc.sslm, "Localizer checkpoint")->required()->check(CLI::ExistingFile);
  localize->add_option("--frame", lc.frame, "RGB PNG")->required()->check(CLI::ExistingFile);
  localize->add_option("--out", lc.out, "Mask PNG")->required();

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Summarise an evaluation CSV");
  report->add_option("csv", rp.csv, "Evaluation CSV")->required()->check(CLI::ExistingFile);
  report->add_option("--plot", rp.plot, "Write an SVG bar chart of mean SDR");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage-error: " << e.what() << " (see --help)\n";
    return 2;
  }

  try {
    if (*gen) return run_generate(g, synth);
    if (*train) return run_train(g, tr);
    if (*tsslm) return run_train_sslm(g, ts);
    if (*evaluate) return run_evaluate(g, ev);
    if (*separate) return run_separate(g, sp);
    if (*localize) return run_localize(g, lc);
    if (*report) return run_report(g, rp);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal-error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
