#pragma once

#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

#include "cof/core/optim.hpp"
#include "cof/io/checkpoint.hpp"
#include "cof/sslm/sslm.hpp"
#include "cof/training/data.hpp"
#include "cof/training/loss.hpp"

namespace cof::training {

inline constexpr const char* kCheckpointName = "checkpoint.ckpt";
inline constexpr const char* kLossLogName = "loss_log.csv";

struct TrainOptions {
  std::filesystem::path resume;  // checkpoint to continue from
  std::int64_t stop_after = -1;  // stop (and checkpoint) after this many iterations
  std::function<void(std::int64_t, double)> on_iteration;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::vector<double> losses;  // this run only
};

inline std::string format_number(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.9g", v);
  return b;
}

// Parameters whose path contains one of `pretrained` as a component go to the
// pretrained-rate group, everything else to the scratch group.
inline std::vector<optim::ParamGroup<float>> param_groups(const nn::Module<float>& m, const TrainConfig& tc) {
  optim::ParamGroup<float> pre{"pretrained", {}, tc.lr_pretrained}, scratch{"scratch", {}, tc.lr_scratch};
  for (auto& [name, p] : m.named_parameters()) {
    bool hit = false;
    for (auto& tag : tc.pretrained)
      hit = hit || name.rfind(tag + ".", 0) == 0 || name.find("." + tag + ".") != std::string::npos;
    (hit ? pre : scratch).params.emplace_back(name, p);
  }
  return {pre, scratch};
}

inline std::vector<float> stage_weights(const Config& cfg, const std::vector<double>& w) {
  std::vector<float> r;
  for (int j = 0; j < cfg.model.stages; ++j)
    r.push_back(static_cast<float>(j < static_cast<int>(w.size()) ? w[static_cast<std::size_t>(j)] : 1.0));
  return r;
}

inline std::uint64_t model_seed(const Config& cfg) { return mix_seed(cfg.train.seed, 0xC0F); }

// Builds batches for consecutive iterations, optionally on worker threads
// feeding a bounded queue. Batch contents depend only on (seed, iteration).
class BatchSource {
 public:
  using Make = std::function<Batch(std::int64_t)>;
  BatchSource(Make make, std::int64_t first, std::int64_t end, int workers)
      : make_(std::move(make)), next_(first), end_(end), capacity_(std::max(2, 2 * workers)) {
    for (int w = 0; w < workers; ++w) threads_.emplace_back([this, first, w, workers] { run(first + w, workers); });
  }
  ~BatchSource() {
    {
      std::lock_guard l(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }
  Batch take(std::int64_t it) {
    if (threads_.empty()) return make_(it);
    std::unique_lock l(mu_);
    cv_.wait(l, [&] { return ready_.count(it) > 0 || error_; });
    if (error_) std::rethrow_exception(error_);
    Batch b = std::move(ready_[it]);
    ready_.erase(it);
    next_ = it + 1;
    cv_.notify_all();
    return b;
  }

 private:
  void run(std::int64_t it, int stride) {
    for (; it < end_; it += stride) {
      {
        std::unique_lock l(mu_);
        cv_.wait(l, [&] { return stop_ || it - next_ < capacity_; });
        if (stop_) return;
      }
      try {
        Batch b = make_(it);
        std::lock_guard l(mu_);
        ready_.emplace(it, std::move(b));
      } catch (...) {
        std::lock_guard l(mu_);
        error_ = std::current_exception();
      }
      cv_.notify_all();
    }
  }
  Make make_;
  std::int64_t next_, end_;
  std::int64_t capacity_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::int64_t, Batch> ready_;
  std::exception_ptr error_;
  bool stop_ = false;
};

namespace detail {

inline std::vector<std::size_t> train_pool(const VideoStore& store) {
  auto pool = store.split("train");
  if (pool.empty()) throw InvalidInput("manifest has no training videos");
  return pool;
}

// Keeps the header and rows before `iter` of an existing log.
inline std::string truncated_log(const std::filesystem::path& p, std::int64_t iter) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read loss log " + p.string() + " to resume");
  std::string line, out;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      out += line + "\n";
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) < iter) out += line + "\n";
  }
  return out;
}

inline void dump_batch(const std::filesystem::path& dir, const Batch& b, const std::vector<TrainingExample>& exs) {
  std::filesystem::create_directories(dir);
  io::save_tensor(dir / "mix.cft", b.mix);
  for (std::size_t n = 0; n < b.gt.size(); ++n) {
    io::save_tensor(dir / ("gt" + std::to_string(n) + ".cft"), b.gt[n]);
    io::save_tensor(dir / ("frames" + std::to_string(n) + ".cft"), b.clips[n].frames.value());
  }
  std::ofstream ids(dir / "examples.txt");
  for (auto& e : exs) {
    for (std::size_t n = 0; n < e.ids.size(); ++n) ids << (n ? " " : "") << e.ids[n] << "@" << e.start_frames[n];
    ids << "\n";
  }
}

inline void check_finite(double loss, std::int64_t it, const std::filesystem::path& out_dir, const Batch& b,
                         const std::vector<TrainingExample>& exs) {
  if (std::isfinite(loss)) return;
  const auto dir = out_dir / ("nan_dump_iter" + std::to_string(it));
  dump_batch(dir, b, exs);
  throw NumericError("non-finite loss at iteration " + std::to_string(it) + "; batch written to " + dir.string());
}

inline Batch make_batch(const VideoStore& store, const std::vector<std::size_t>& pool, const Config& cfg,
                        std::uint64_t stream, std::int64_t it, int batch_size, std::vector<TrainingExample>* keep) {
  std::vector<TrainingExample> exs;
  for (int b = 0; b < batch_size; ++b)
    exs.push_back(sample_example(store, pool, cfg.train.sources,
                                 mix_seed(stream, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(b)), cfg,
                                 cfg.train.augment));
  Batch batch = collate(exs);
  if (keep) *keep = std::move(exs);
  return batch;
}

}  // namespace detail

// Mix-and-separate training of the cascade with SGD. Writes loss_log.csv and
// checkpoint.ckpt to out_dir.
inline TrainResult train_cof(const Config& cfg, const VideoStore& store, const std::filesystem::path& out_dir,
                             const TrainOptions& opt = {}) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  Rng init(model_seed(cfg));
  separation::CofModel<float> model(cfg.model, init);
  optim::Sgd<float> sgd(param_groups(model, cfg.train), cfg.train.momentum, cfg.train.weight_decay);
  const optim::StepSchedule sched{cfg.train.lr_decay_factor, cfg.train.lr_decay_every};
  const auto r = stage_weights(cfg, cfg.train.stage_weights);
  const auto pool = detail::train_pool(store);

  TrainResult res;
  res.checkpoint = out_dir / kCheckpointName;
  res.loss_log = out_dir / kLossLogName;
  std::int64_t start = 0;
  std::string log;
  if (!opt.resume.empty()) {
    const auto ck = io::load_checkpoint(opt.resume);
    if (ck.kind != "cof") throw InvalidInput(opt.resume.string() + " is not a separation checkpoint");
    io::restore_module(ck, model, "model.");
    for (auto& [name, t] : ck.tensors)
      if (name.rfind("optim.", 0) == 0) sgd.state()[name.substr(6)] = t;
    start = ck.iteration;
    log = detail::truncated_log(res.loss_log, start);
  } else {
    log = "iter,loss";
    for (int j = 1; j <= cfg.model.stages; ++j) log += ",stage" + std::to_string(j);
    log += ",lr,lr_pretrained\n";
  }
  const std::string init_state = io::rng_to_string(init);

  auto save = [&](std::int64_t iteration) {
    io::Checkpoint ck;
    ck.kind = "cof";
    ck.iteration = iteration;
    ck.config = cfg.to_map();
    ck.rng_state = init_state;
    io::store_module(ck, model, "model.");
    for (auto& [name, v] : sgd.state()) ck.put("optim." + name, v);
    io::save_checkpoint(res.checkpoint, ck);
    io::detail::atomic_write(res.loss_log, log);
  };

  const std::int64_t end = opt.stop_after >= 0 ? std::min<std::int64_t>(opt.stop_after, cfg.train.iters) : cfg.train.iters;
  const std::uint64_t stream = mix_seed(cfg.train.seed, 0xDA7A);
  BatchSource source([&](std::int64_t it) { return detail::make_batch(store, pool, cfg, stream, it, cfg.train.batch_size, nullptr); },
                     start, end, cfg.train.workers);
  model.set_training(true);
  for (std::int64_t it = start; it < end; ++it) {
    Batch batch = source.take(it);
    auto outs = model.forward(batch.mix, batch.clips);
    std::vector<std::vector<Var<float>>> probs(outs.size());
    for (std::size_t j = 0; j < outs.size(); ++j)
      for (auto& g : outs[j].g) probs[j].push_back(ops::sigmoid(g));
    auto loss = separation_loss(probs, batch.gt, r);
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) {
      std::vector<TrainingExample> exs;
      detail::make_batch(store, pool, cfg, stream, it, cfg.train.batch_size, &exs);
      detail::check_finite(lv, it, out_dir, batch, exs);
    }
    const auto per_stage = stage_losses(probs, batch.gt);
    const double mult = sched.multiplier(it);
    sgd.zero_grad();
    backward(loss);
    sgd.step(mult);
    res.losses.push_back(lv);
    if (it % cfg.train.log_every == 0 || it + 1 == end) {
      log += std::to_string(it) + "," + format_number(lv);
      for (double s : per_stage) log += "," + format_number(s);
      log += "," + format_number(cfg.train.lr_scratch * mult) + "," + format_number(cfg.train.lr_pretrained * mult) + "\n";
    }
    if (opt.on_iteration) opt.on_iteration(it, lv);
    if ((it + 1) % cfg.train.checkpoint_every == 0 && it + 1 < end) save(it + 1);
  }
  save(end);
  return res;
}

// Rebuilds a trained cascade from its checkpoint, in evaluation mode.
struct LoadedModel {
  Config config;
  std::unique_ptr<separation::CofModel<float>> model;
  std::int64_t iteration = 0;
};

inline LoadedModel load_cof(const std::filesystem::path& path) {
  const auto ck = io::load_checkpoint(path);
  if (ck.kind != "cof") throw InvalidInput(path.string() + " is not a separation checkpoint (kind '" + ck.kind + "')");
  LoadedModel m;
  m.config = config_from_map(ck.config);
  Rng rng(model_seed(m.config));
  m.model = std::make_unique<separation::CofModel<float>>(m.config.model, rng);
  io::restore_module(ck, *m.model, "model.");
  m.model->set_training(false);
  m.iteration = ck.iteration;
  return m;
}

// Masks every clip of a batch with its localizer output on the key frame.
inline std::vector<vision::Clip<float>> mask_clips(const sslm::SslmNet<float>& net,
                                                  const std::vector<vision::Clip<float>>& clips,
                                                  std::vector<Var<float>>* masks = nullptr) {
  std::vector<vision::Clip<float>> out;
  for (auto& c : clips) {
    auto m = net.forward(vision::keyframe(c.frames));
    vision::Clip<float> mc{sslm::apply_location_mask(c.frames, m), {}};
    if (c.has_flows()) mc.flows = sslm::apply_location_mask(c.flows, m);
    if (masks) masks->push_back(m);
    out.push_back(std::move(mc));
  }
  return out;
}

inline std::uint64_t sslm_seed(const Config& cfg) { return mix_seed(cfg.train.seed, 0x551); }

// Trains the localizer with Adam against a frozen cascade. `cfg` supplies the
// localizer settings; the cascade comes from `cof_checkpoint`.
inline TrainResult train_sslm(const Config& cfg, const std::filesystem::path& cof_checkpoint, const VideoStore& store,
                              const std::filesystem::path& out_dir, const TrainOptions& opt = {}) {
  cfg.validate();
  auto cof = load_cof(cof_checkpoint);
  const auto& mc = cof.config;
  if (mc.video.frame_size != cfg.video.frame_size || mc.video.clip_frames != cfg.video.clip_frames ||
      mc.audio.rows != cfg.audio.rows || mc.audio.frames != cfg.audio.frames)
    throw InvalidInput("localizer data settings differ from the separation checkpoint's");
  cof.model->set_requires_grad(false);
  std::filesystem::create_directories(out_dir);
  Rng init(sslm_seed(cfg));
  sslm::SslmNet<float> net(cfg.sslm.backbone, init);
  optim::Adam<float> adam({{"sslm", net.named_parameters(), cfg.sslm.lr}});
  const auto r = stage_weights(mc, cfg.sslm.stage_weights);
  const auto pool = detail::train_pool(store);

  TrainResult res;
  res.checkpoint = out_dir / kCheckpointName;
  res.loss_log = out_dir / kLossLogName;
  std::string log = "iter,loss,fidelity,mask_mean,lr\n";
  const std::uint64_t stream = mix_seed(cfg.train.seed, 0x551D);
  const std::int64_t end = opt.stop_after >= 0 ? std::min<std::int64_t>(opt.stop_after, cfg.sslm.iters) : cfg.sslm.iters;
  Config data_cfg = cfg;
  data_cfg.train.sources = mc.train.sources;
  BatchSource source([&](std::int64_t it) { return detail::make_batch(store, pool, data_cfg, stream, it, cfg.sslm.batch_size, nullptr); },
                     0, end, cfg.train.workers);
  net.set_training(true);
  for (std::int64_t it = 0; it < end; ++it) {
    Batch batch = source.take(it);
    std::vector<std::vector<Tensor<float>>> targets;
    {
      NoGradGuard ng;
      for (auto& so : cof.model->forward(batch.mix, batch.clips)) {
        targets.emplace_back();
        for (auto& g : so.g) targets.back().push_back(ops::sigmoid(g).value());
      }
    }
    std::vector<Var<float>> masks;
    const auto masked = mask_clips(net, batch.clips, &masks);
    auto outs = cof.model->forward(batch.mix, masked);
    std::vector<std::vector<Var<float>>> probs(outs.size());
    for (std::size_t j = 0; j < outs.size(); ++j)
      for (auto& g : outs[j].g) probs[j].push_back(ops::sigmoid(g));
    const auto all_masks = ops::concat(masks, 0);
    auto loss = sslm::sslm_loss(probs, targets, all_masks, r, static_cast<float>(cfg.sslm.lambda));
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) {
      std::vector<TrainingExample> exs;
      detail::make_batch(store, pool, data_cfg, stream, it, cfg.sslm.batch_size, &exs);
      detail::check_finite(lv, it, out_dir, batch, exs);
    }
    double mask_mean = 0;
    for (std::size_t i = 0; i < all_masks.value().size(); ++i) mask_mean += all_masks.value()[i];
    mask_mean /= static_cast<double>(all_masks.value().size());
    adam.zero_grad();
    backward(loss);
    adam.step();
    res.losses.push_back(lv);
    if (it % cfg.train.log_every == 0 || it + 1 == end)
      log += std::to_string(it) + "," + format_number(lv) + "," +
             format_number(lv - cfg.sslm.lambda * mask_mean) + "," + format_number(mask_mean) + "," +
             format_number(cfg.sslm.lr) + "\n";
    if (opt.on_iteration) opt.on_iteration(it, lv);
  }
  io::Checkpoint ck;
  ck.kind = "sslm";
  ck.iteration = end;
  ck.config = cfg.to_map();
  ck.rng_state = io::rng_to_string(init);
  ck.extra = {{"adam_steps", adam.steps()}};
  io::store_module(ck, net, "sslm.");
  for (auto& [name, v] : adam.state()) ck.put("optim." + name, v);
  io::save_checkpoint(res.checkpoint, ck);
  io::detail::atomic_write(res.loss_log, log);
  return res;
}

struct LoadedSslm {
  Config config;
  std::unique_ptr<sslm::SslmNet<float>> net;
};

inline LoadedSslm load_sslm(const std::filesystem::path& path) {
  const auto ck = io::load_checkpoint(path);
  if (ck.kind != "sslm") throw InvalidInput(path.string() + " is not a localizer checkpoint (kind '" + ck.kind + "')");
  LoadedSslm s;
  s.config = config_from_map(ck.config);
  Rng rng(sslm_seed(s.config));
  s.net = std::make_unique<sslm::SslmNet<float>>(s.config.sslm.backbone, rng);
  io::restore_module(ck, *s.net, "sslm.");
  s.net->set_training(false);
  return s;
}

}  // namespace cof::training
