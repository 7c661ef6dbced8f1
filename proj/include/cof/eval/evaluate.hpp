#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "cof/eval/bss_eval.hpp"
#include "cof/training/trainer.hpp"

namespace cof::eval {

struct TestMixture {
  std::string id;
  std::vector<std::size_t> videos;
  std::vector<std::int64_t> starts;
};

// Every N-combination of test videos in lexicographic order, or `count` of
// them drawn with `seed`. Clip starts are drawn per mixture from `seed`.
inline std::vector<TestMixture> test_mixtures(const training::VideoStore& store, const training::Config& cfg, int N,
                                              int count, std::uint64_t seed, const std::string& split = "test") {
  const auto pool = store.split(split);
  if (static_cast<int>(pool.size()) < N)
    throw InvalidInput("split '" + split + "' has " + std::to_string(pool.size()) + " videos, mixtures need " +
                       std::to_string(N));
  std::vector<std::vector<std::size_t>> combos;
  std::vector<std::size_t> pick(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) pick[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i);
  while (true) {
    std::vector<std::size_t> c;
    for (auto p : pick) c.push_back(pool[p]);
    combos.push_back(c);
    int i = N - 1;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == pool.size() - static_cast<std::size_t>(N - i)) --i;
    if (i < 0) break;
    ++pick[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < N; ++k) pick[static_cast<std::size_t>(k)] = pick[static_cast<std::size_t>(k - 1)] + 1;
  }
  std::vector<std::size_t> order(combos.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (count > 0 && static_cast<std::size_t>(count) < combos.size()) {
    Rng rng(mix_seed(seed, 0xC0B));
    for (std::size_t k = 0; k < static_cast<std::size_t>(count); ++k)
      std::swap(order[k], order[static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(k),
                                                                     static_cast<std::int64_t>(order.size()) - 1))]);
    order.resize(static_cast<std::size_t>(count));
    std::sort(order.begin(), order.end());
  }
  std::vector<TestMixture> out;
  for (auto idx : order) {
    TestMixture m;
    m.videos = combos[idx];
    Rng rng(mix_seed(seed, idx));
    for (auto v : m.videos) {
      const auto& vd = store.video(v);
      m.starts.push_back(uniform_int(rng, 0, std::max<std::int64_t>(0, vd.frame_count() - cfg.video.clip_frames)));
      m.id += (m.id.empty() ? "" : "+") + vd.id;
    }
    out.push_back(std::move(m));
  }
  return out;
}

struct EvalRow {
  std::string mixture_id;
  int source_id = 0;
  std::string stage;  // "stage<j>", "oracle" or "mixture"
  BssScores scores;
  std::string category;
};

struct EvalSummary {
  std::string stage;
  double sdr = 0, sir = 0, sar = 0;
  int count = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  int mixtures = 0;

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (auto& r : rows)
      if (std::find(out.begin(), out.end(), r.stage) == out.end()) out.push_back(r.stage);
    return out;
  }
  EvalSummary summary(const std::string& label) const {
    EvalSummary s{label};
    for (auto& r : rows)
      if (r.stage == label) {
        s.sdr += r.scores.sdr;
        s.sir += r.scores.sir;
        s.sar += r.scores.sar;
        ++s.count;
      }
    if (s.count) {
      s.sdr /= s.count;
      s.sir /= s.count;
      s.sar /= s.count;
    }
    return s;
  }
  std::vector<EvalSummary> summaries() const {
    std::vector<EvalSummary> out;
    for (auto& l : labels()) out.push_back(summary(l));
    return out;
  }
};

namespace detail {
inline std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.6f", v);
  return b;
}
}  // namespace detail

inline std::string report_csv(const EvalReport& r) {
  std::string out = "mixture_id,source_id,stage,sdr,sir,sar\n";
  for (auto& row : r.rows)
    out += row.mixture_id + "," + std::to_string(row.source_id) + "," + row.stage + "," + detail::num(row.scores.sdr) +
           "," + detail::num(row.scores.sir) + "," + detail::num(row.scores.sar) + "\n";
  return out;
}

inline nlohmann::json report_summary_json(const EvalReport& r) {
  nlohmann::json j{{"format_version", 1}, {"mixtures", r.mixtures}, {"infinite_db", kInfiniteDb}};
  nlohmann::json rows = nlohmann::json::array();
  for (auto& s : r.summaries())
    rows.push_back({{"stage", s.stage}, {"sdr", s.sdr}, {"sir", s.sir}, {"sar", s.sar}, {"count", s.count}});
  j["summary"] = rows;
  return j;
}

inline std::string report_table(const std::vector<EvalSummary>& rows) {
  std::string out;
  char b[160];
  std::snprintf(b, sizeof b, "%-16s %9s %9s %9s %7s\n", "stage", "SDR", "SIR", "SAR", "count");
  out += b;
  for (auto& s : rows) {
    auto cell = [](double v) {
      if (v >= kInfiniteDb) return std::string("inf");
      if (v <= -kInfiniteDb) return std::string("-inf");
      char c[32];
      std::snprintf(c, sizeof c, "%.2f", v);
      return std::string(c);
    };
    std::snprintf(b, sizeof b, "%-16s %9s %9s %9s %7d\n", s.stage.c_str(), cell(s.sdr).c_str(), cell(s.sir).c_str(),
                  cell(s.sar).c_str(), s.count);
    out += b;
  }
  return out;
}

inline std::vector<EvalSummary> summaries_from_csv(const std::string& csv) {
  EvalReport r;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  if (line.rfind("mixture_id,source_id,stage,sdr,sir,sar", 0) != 0) throw InvalidInput("not an evaluation CSV");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    if (f.size() < 6) throw InvalidInput("evaluation CSV row has " + std::to_string(f.size()) + " fields: " + line);
    EvalRow row;
    row.mixture_id = f[0];
    row.source_id = std::stoi(f[1]);
    row.stage = f[2];
    row.scores = {std::stod(f[3]), std::stod(f[4]), std::stod(f[5])};
    r.rows.push_back(row);
  }
  return r.summaries();
}

struct EvalOptions {
  int stages = 0;  // 0: all stages of the model
  int sources = 2;
  int mixtures = 0;
  std::uint64_t seed = 1234;
  int filter_len = 512;
  const sslm::SslmNet<float>* localizer = nullptr;  // mask the clips first
  bool oracle = true;
  bool mixture_baseline = true;
  std::string split = "test";
};

inline audio::BinaryMask mask_from(const Tensor<float>& m, const audio::WarpedMagnitude& ref) {
  audio::BinaryMask b;
  b.values = Tensor<double>({ref.rows(), ref.frames()});
  for (std::size_t i = 0; i < b.values.size(); ++i) b.values[i] = m[i];
  b.warp_map = ref.warp_map;
  b.source_rows = ref.source_rows;
  return b;
}

// Separates each test mixture with every stage and scores the results.
// Rows per mixture and source: one per stage, then the ideal mask, then the
// mixture itself as the estimate.
inline EvalReport evaluate_model(const separation::CofModel<float>& model, const training::Config& cfg,
                                 const training::VideoStore& store, const EvalOptions& o) {
  NoGradGuard ng;
  const auto mixtures = test_mixtures(store, cfg, o.sources, o.mixtures, o.seed, o.split);
  EvalReport rep;
  rep.mixtures = static_cast<int>(mixtures.size());
  const std::int64_t L = cfg.audio.clip_samples();
  for (auto& mx : mixtures) {
    const auto ex = training::make_example(store, mx.videos, mx.starts, cfg, nullptr);
    const auto batch = training::collate({ex});
    const auto clips = o.localizer ? training::mask_clips(*o.localizer, batch.clips) : batch.clips;
    const auto outs = model.forward(batch.mix, clips, o.stages);
    std::vector<std::vector<double>> refs;
    for (auto& s : ex.sources) refs.push_back(s.samples);
    BssEvaluator ev(refs, o.filter_len);
    auto add = [&](const std::string& label, std::size_t n, const std::vector<double>& est) {
      rep.rows.push_back({mx.id, static_cast<int>(n), label, ev.score(n, est), store.video(mx.videos[n]).category});
    };
    for (auto& so : outs)
      for (std::size_t n = 0; n < so.mask.size(); ++n)
        add("stage" + std::to_string(so.stage), n,
            audio::reconstruct(mask_from(so.mask[n], ex.mix_warped), ex.mix_spec, L).samples);
    if (o.oracle)
      for (std::size_t n = 0; n < ex.gt.size(); ++n)
        add("oracle", n, audio::reconstruct(ex.gt[n], ex.mix_spec, L).samples);
    if (o.mixture_baseline)
      for (std::size_t n = 0; n < ex.sources.size(); ++n) add("mixture", n, ex.mixture.samples);
  }
  return rep;
}

struct PairwiseMatrix {
  std::vector<std::string> categories;
  std::vector<std::vector<double>> sdr;  // NaN where no mixture exists
  std::vector<std::vector<int>> count;

  bool missing(std::size_t i, std::size_t j) const { return count[i][j] == 0; }
};

// Mean SDR of `label` over mixtures pairing category i with category j,
// averaged over both sources of each mixture.
inline PairwiseMatrix pairwise_matrix(const EvalReport& rep, std::vector<std::string> categories,
                                      const std::string& label) {
  PairwiseMatrix pm;
  pm.categories = std::move(categories);
  const std::size_t C = pm.categories.size();
  pm.sdr.assign(C, std::vector<double>(C, 0.0));
  pm.count.assign(C, std::vector<int>(C, 0));
  auto index = [&](const std::string& c) -> std::size_t {
    auto it = std::find(pm.categories.begin(), pm.categories.end(), c);
    if (it == pm.categories.end()) throw InvalidInput("category '" + c + "' is not in the requested list");
    return static_cast<std::size_t>(it - pm.categories.begin());
  };
  std::map<std::string, std::vector<const EvalRow*>> by_mix;
  for (auto& r : rep.rows)
    if (r.stage == label) by_mix[r.mixture_id].push_back(&r);
  for (auto& [_, rows] : by_mix) {
    if (rows.size() != 2) throw InvalidInput("pairwise matrix needs two-source mixtures");
    const auto a = index(rows[0]->category), b = index(rows[1]->category);
    const double m = 0.5 * (rows[0]->scores.sdr + rows[1]->scores.sdr);
    pm.sdr[a][b] += m;
    pm.count[a][b] += 1;
    if (a != b) {
      pm.sdr[b][a] += m;
      pm.count[b][a] += 1;
    }
  }
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j)
      pm.sdr[i][j] = pm.count[i][j] ? pm.sdr[i][j] / pm.count[i][j] : std::nan("");
  return pm;
}

inline std::string pairwise_table(const PairwiseMatrix& pm) {
  std::string out;
  char b[64];
  std::snprintf(b, sizeof b, "%-12s", "");
  out += b;
  for (auto& c : pm.categories) {
    std::snprintf(b, sizeof b, " %10s", c.substr(0, 10).c_str());
    out += b;
  }
  out += "\n";
  for (std::size_t i = 0; i < pm.categories.size(); ++i) {
    std::snprintf(b, sizeof b, "%-12s", pm.categories[i].substr(0, 12).c_str());
    out += b;
    for (std::size_t j = 0; j < pm.categories.size(); ++j) {
      if (pm.missing(i, j))
        std::snprintf(b, sizeof b, " %10s", "missing");
      else
        std::snprintf(b, sizeof b, " %10.2f", pm.sdr[i][j]);
      out += b;
    }
    out += "\n";
  }
  return out;
}

}  // namespace cof::eval
