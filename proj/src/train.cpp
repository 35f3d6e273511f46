#include "flowctl/train.hpp"

#include "flowctl/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace flowctl {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Deterministic epoch-shuffled cursor over dataset indices.
class BatchCursor {
 public:
  BatchCursor(size_t n, uint64_t seed) : order_(n), seed_(seed) {
    std::iota(order_.begin(), order_.end(), size_t{0});
    reshuffle();
  }

  size_t next() {
    if (pos_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    Rng rng(derive_seed(seed_, 0x65706f63ull, epoch_ + 1));
    for (size_t i = order_.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(i)));
      std::swap(order_[i - 1], order_[j]);
    }
    pos_ = 0;
  }

  std::vector<size_t> order_;
  uint64_t seed_;
  uint64_t epoch_ = 0;
  size_t pos_ = 0;
};

// Fills a batch until the frame budget is reached; the final sample may
// overshoot, so every batch holds at least one sample.
std::vector<size_t> collect_batch(BatchCursor& cursor, const std::vector<SynthUtterance>& data,
                                  int budget) {
  std::vector<size_t> batch;
  int frames = 0;
  while (frames < budget) {
    size_t idx = cursor.next();
    batch.push_back(idx);
    frames += static_cast<int>(data[idx].features.cols());
  }
  return batch;
}

struct SampleDraws {
  TemporalMask mask;
  double t;
  Matf x0;
};

SampleDraws make_draws(const SynthUtterance& u, const FlowStepInterval& interval,
                       const TrainConfig& cfg, uint64_t step, uint64_t pos) {
  Rng rng(derive_seed(cfg.seed, 0x64726177ull + step, pos + 1));
  SampleDraws d;
  const int T = static_cast<int>(u.features.cols());
  d.mask = sample_mask(T, rng, cfg.mask_ratio_lo, cfg.mask_ratio_hi);
  d.t = sample_flowstep(interval, rng);
  d.x0 = gaussian_matrix(static_cast<int>(u.features.rows()), T, rng);
  return d;
}

constexpr size_t kChunk = 4;  // samples per reduction chunk (fixed; not thread count)

}  // namespace

std::string TrainLog::to_csv() const {
  std::string out = "step,loss,wall_ms\n";
  char buf[128];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.3f\n", r.step, r.loss, r.wall_ms);
    out += buf;
  }
  return out;
}

PretrainResult pretrain_base(const std::vector<SynthUtterance>& dataset, const TrainConfig& cfg,
                             const ModelConfig& model_cfg) {
  cfg.validate();
  if (cfg.phase != TrainConfig::Phase::base) throw std::invalid_argument("pretrain_base: phase must be base");
  if (!(cfg.flow_interval.lo == 0.0 && cfg.flow_interval.hi == 1.0)) {
    throw std::invalid_argument("pretrain_base: flow interval must be [0, 1]");
  }
  if (dataset.empty()) throw std::invalid_argument("pretrain_base: empty dataset");

  PretrainResult result;
  result.params = init_base(model_cfg, cfg.seed);

  BaseParams m_state = init_base(model_cfg, cfg.seed);
  BaseParams v_state = init_base(model_cfg, cfg.seed);
  auto m_views = tensor_views(m_state);
  auto v_views = tensor_views(v_state);
  zero_views(m_views);
  zero_views(v_views);
  auto p_views = tensor_views(result.params);

  BaseParams total_grads = init_base(model_cfg, cfg.seed);
  auto g_views = tensor_views(total_grads);

  BatchCursor cursor(dataset.size(), cfg.seed);
  std::vector<BaseParams> chunk_grads;
  const auto t0 = Clock::now();

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<size_t> batch = collect_batch(cursor, dataset, cfg.batch_frames);
    const size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
    while (chunk_grads.size() < n_chunks) chunk_grads.push_back(init_base(model_cfg, cfg.seed));

    std::vector<double> losses(batch.size(), 0.0);
    parallel_for(
        n_chunks,
        [&](size_t ci) {
          auto views = tensor_views(chunk_grads[ci]);
          zero_views(views);
          for (size_t s = ci * kChunk; s < std::min(batch.size(), (ci + 1) * kChunk); ++s) {
            const SynthUtterance& u = dataset[batch[s]];
            SampleDraws d = make_draws(u, cfg.flow_interval, cfg, static_cast<uint64_t>(step), s);
            losses[s] = base_sample_loss<float>(u.features, u.spec.tokens, d.mask, d.t, d.x0,
                                                result.params, &chunk_grads[ci]);
          }
        },
        cfg.threads);

    double loss = std::accumulate(losses.begin(), losses.end(), 0.0) / batch.size();
    if (!std::isfinite(loss)) {
      throw std::runtime_error("pretrain_base: non-finite loss at step " + std::to_string(step));
    }

    zero_views(g_views);
    for (size_t ci = 0; ci < n_chunks; ++ci) {
      auto views = tensor_views(chunk_grads[ci]);
      for (size_t i = 0; i < g_views.size(); ++i) {
        for (long j = 0; j < g_views[i].size(); ++j) g_views[i].data[j] += views[i].data[j];
      }
    }
    const float inv_n = 1.f / static_cast<float>(batch.size());
    for (auto& v : g_views) {
      for (long j = 0; j < v.size(); ++j) v.data[j] *= inv_n;
    }

    adam_update(p_views, g_views, m_views, v_views, cfg, step + 1);

    if ((step + 1) % cfg.log_every == 0 || step == 0 || step + 1 == cfg.steps) {
      result.log.records.push_back({step + 1, loss, ms_since(t0)});
    }
  }
  return result;
}

CtrlTrainResult train_ctrlnet(const std::vector<SynthUtterance>& dataset, const BaseParams& base,
                              const CtrlConfig& ctrl_cfg, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.phase != TrainConfig::Phase::ctrlnet) {
    throw std::invalid_argument("train_ctrlnet: phase must be ctrlnet");
  }
  if (cfg.flow_interval.lo != 0.0 || cfg.flow_interval.hi != ctrl_cfg.t_emo) {
    throw std::invalid_argument("train_ctrlnet: flow interval must be [0, t_emo]");
  }
  if (dataset.empty()) throw std::invalid_argument("train_ctrlnet: empty dataset");

  const uint64_t base_hash_before = hash_base_params(base);

  CtrlTrainResult result;
  result.params = init_ctrlnet(base, ctrl_cfg, cfg.seed);

  // Conditioning tracks: the oracle extractor applied to the training
  // features, smoothed with the configured window.
  std::vector<EmotionTrack> cond_tracks(dataset.size());
  parallel_for(
      dataset.size(),
      [&](size_t i) { cond_tracks[i] = extract_emotion(dataset[i].features, ctrl_cfg.emo_window); },
      cfg.threads);

  CtrlParams m_state = init_ctrlnet(base, ctrl_cfg, cfg.seed);
  CtrlParams v_state = init_ctrlnet(base, ctrl_cfg, cfg.seed);
  auto m_views = tensor_views(m_state);
  auto v_views = tensor_views(v_state);
  zero_views(m_views);
  zero_views(v_views);
  auto p_views = tensor_views(result.params);

  CtrlParams total_grads = init_ctrlnet(base, ctrl_cfg, cfg.seed);
  auto g_views = tensor_views(total_grads);

  BatchCursor cursor(dataset.size(), cfg.seed);
  std::vector<CtrlParams> chunk_grads;
  const auto t0 = Clock::now();

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<size_t> batch = collect_batch(cursor, dataset, cfg.batch_frames);
    const size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
    while (chunk_grads.size() < n_chunks) chunk_grads.push_back(init_ctrlnet(base, ctrl_cfg, cfg.seed));

    std::vector<double> losses(batch.size(), 0.0);
    parallel_for(
        n_chunks,
        [&](size_t ci) {
          auto views = tensor_views(chunk_grads[ci]);
          zero_views(views);
          for (size_t s = ci * kChunk; s < std::min(batch.size(), (ci + 1) * kChunk); ++s) {
            const SynthUtterance& u = dataset[batch[s]];
            SampleDraws d = make_draws(u, cfg.flow_interval, cfg, static_cast<uint64_t>(step), s);
            losses[s] = ctrl_sample_loss<float>(u.features, u.spec.tokens, cond_tracks[batch[s]],
                                                d.mask, d.t, d.x0, base, result.params,
                                                &chunk_grads[ci]);
          }
        },
        cfg.threads);

    double loss = std::accumulate(losses.begin(), losses.end(), 0.0) / batch.size();
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train_ctrlnet: non-finite loss at step " + std::to_string(step));
    }

    zero_views(g_views);
    for (size_t ci = 0; ci < n_chunks; ++ci) {
      auto views = tensor_views(chunk_grads[ci]);
      for (size_t i = 0; i < g_views.size(); ++i) {
        for (long j = 0; j < g_views[i].size(); ++j) g_views[i].data[j] += views[i].data[j];
      }
    }
    const float inv_n = 1.f / static_cast<float>(batch.size());
    for (auto& v : g_views) {
      for (long j = 0; j < v.size(); ++j) v.data[j] *= inv_n;
    }

    adam_update(p_views, g_views, m_views, v_views, cfg, step + 1);

    if ((step + 1) % cfg.log_every == 0 || step == 0 || step + 1 == cfg.steps) {
      result.log.records.push_back({step + 1, loss, ms_since(t0)});
    }
  }

  if (hash_base_params(base) != base_hash_before) {
    throw std::runtime_error("train_ctrlnet: frozen base parameters changed during training");
  }
  return result;
}

}  // namespace flowctl
