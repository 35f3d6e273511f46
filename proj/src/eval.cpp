#include "flowctl/eval.hpp"

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

void append_fields(std::string& out, double ter, double spk, double emo, double av, double wall) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), ",%.9g,%.9g,%.9g,%.9g,%.3f", ter, spk, emo, av, wall);
  out += buf;
}

}  // namespace

std::string records_to_csv(const std::vector<ExperimentRecord>& records) {
  std::string out = std::string(kRecordCsvHeader) + "\n";
  for (const auto& r : records) {
    out += r.config_tag;
    append_fields(out, r.ter, r.spk_sim, r.emo_sim, r.av_cos, r.wall_ms);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

double ter(const std::vector<int>& ref_tokens, const FeatureMatrix& gen_features,
           const Codebook& codebook, int frames_per_token) {
  std::vector<int> decoded = decode_tokens(gen_features, codebook, frames_per_token);
  if (decoded.size() != ref_tokens.size()) {
    throw std::invalid_argument("ter: token count mismatch between reference and generation");
  }
  if (decoded.empty()) throw std::invalid_argument("ter: empty token sequence");
  int errors = 0;
  for (size_t i = 0; i < decoded.size(); ++i) {
    if (decoded[i] != ref_tokens[i]) ++errors;
  }
  return static_cast<double>(errors) / static_cast<double>(decoded.size());
}

EmotionTrack resample_track(const EmotionTrack& track, int new_length) {
  const int T = static_cast<int>(track.cols());
  if (new_length == T) return track;
  if (new_length < 1 || T < 1) throw std::invalid_argument("resample_track: empty track");
  EmotionTrack out(track.rows(), new_length);
  for (int i = 0; i < new_length; ++i) {
    double pos = new_length == 1 ? 0.0
                                 : static_cast<double>(i) * static_cast<double>(T - 1) /
                                       static_cast<double>(new_length - 1);
    int lo = static_cast<int>(std::floor(pos));
    int hi = std::min(lo + 1, T - 1);
    float w = static_cast<float>(pos - lo);
    out.col(i) = track.col(lo) * (1.f - w) + track.col(hi) * w;
  }
  return out;
}

double emo_sim(const EmotionTrack& ref, const EmotionTrack& gen) {
  EmotionTrack g = gen.cols() == ref.cols() ? gen : resample_track(gen, static_cast<int>(ref.cols()));
  double acc = 0.0;
  for (int c = 0; c < 2; ++c) {
    double se = 0.0;
    for (long t = 0; t < ref.cols(); ++t) {
      double e = static_cast<double>(ref(c, t)) - static_cast<double>(g(c, t));
      se += e * e;
    }
    double rmse = std::sqrt(se / static_cast<double>(ref.cols()));
    acc += 1.0 - rmse / 2.0;
  }
  return acc / 2.0;
}

double av_cos(const EmotionTrack& ref, const EmotionTrack& gen, int window) {
  EmotionTrack r = window_interpolate(ref, window);
  EmotionTrack g = window_interpolate(gen, window);
  if (g.cols() != r.cols()) g = resample_track(g, static_cast<int>(r.cols()));
  // Center each channel, then flatten.
  double dot = 0.0, nr = 0.0, ng = 0.0;
  for (int c = 0; c < 2; ++c) {
    double mr = r.row(c).cast<double>().mean();
    double mg = g.row(c).cast<double>().mean();
    for (long t = 0; t < r.cols(); ++t) {
      double a = static_cast<double>(r(c, t)) - mr;
      double b = static_cast<double>(g(c, t)) - mg;
      dot += a * b;
      nr += a * a;
      ng += b * b;
    }
  }
  if (nr <= 0.0 || ng <= 0.0) return 0.0;
  return dot / (std::sqrt(nr) * std::sqrt(ng));
}

double speaker_sim(const FeatureMatrix& ref_features, const FeatureMatrix& gen_features,
                   const Codebook& codebook, int frames_per_token) {
  Vecf a = estimate_speaker(ref_features, codebook, frames_per_token);
  Vecf b = estimate_speaker(gen_features, codebook, frames_per_token);
  double na = a.cast<double>().norm();
  double nb = b.cast<double>().norm();
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return a.cast<double>().dot(b.cast<double>()) / (na * nb);
}

namespace {

std::vector<double> ranks(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need matched n >= 2");
  std::vector<double> rx = ranks(x), ry = ranks(y);
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    double a = rx[i] - mx, b = ry[i] - my;
    dot += a * b;
    nx += a * a;
    ny += b * b;
  }
  if (nx <= 0.0 || ny <= 0.0) return 0.0;
  return dot / (std::sqrt(nx) * std::sqrt(ny));
}

// ---------------------------------------------------------------------------
// Synthesis

FeatureMatrix synthesize(const BaseParams& base, const CtrlParams* ctrl,
                         const FeatureMatrix& ref_features, const std::vector<int>& ref_tokens,
                         const std::vector<int>& target_tokens, const EmotionTrack& emotion_full,
                         const SampleSchedule& schedule, Rng& rng,
                         const std::vector<int>& skip_set) {
  const int F = static_cast<int>(ref_features.rows());
  const int T_ref = static_cast<int>(ref_features.cols());
  const int T_gen = static_cast<int>(target_tokens.size()) * base.cfg.L;
  const int T = T_ref + T_gen;
  if (T_gen < 1) throw std::invalid_argument("synthesize: empty target token sequence");
  if (ctrl && emotion_full.cols() != T) {
    throw std::invalid_argument("synthesize: emotion track must cover reference and generated frames");
  }
  if (ctrl && !skip_set.empty()) {
    throw std::invalid_argument("synthesize: block skipping is a base-only analysis tool");
  }

  Matf masked_in(F, T);
  masked_in << ref_features, Matf::Zero(F, T_gen);
  TemporalMask mask = TemporalMask::Zero(T);
  mask.segment(T_ref, T_gen).setOnes();
  std::vector<int> tokens = ref_tokens;
  tokens.insert(tokens.end(), target_tokens.begin(), target_tokens.end());

  FieldFn field_fn = [&](const Matf& x, double t, double lambda) -> Matf {
    if (ctrl == nullptr || lambda == 0.0) {
      BaseTape<float> tape;
      forward_base(x, masked_in, tokens, t, base, skip_set, tape);
      return tape.field;
    }
    JointTape<float> tape;
    return forward_joint(x, masked_in, tokens, emotion_full, t, base, *ctrl, mask, lambda, tape);
  };

  Matf x0 = gaussian_matrix(F, T, rng);
  Matf result = integrate_ode(field_fn, x0, schedule);
  return result.rightCols(T_gen);
}

// ---------------------------------------------------------------------------
// Benchmark construction

std::vector<EvalCase> make_benchmark(const Codebook& codebook, const BenchmarkParams& params,
                                     uint64_t seed) {
  // Fixed arousal/valence transition pairs: (first half) -> (second half).
  static const float kPairs[8][4] = {
      {+0.9f, +0.9f, -0.9f, -0.9f}, {-0.9f, -0.9f, +0.9f, +0.9f},
      {+0.9f, -0.9f, -0.9f, +0.9f}, {-0.9f, +0.9f, +0.9f, -0.9f},
      {+0.9f, 0.0f, -0.9f, 0.0f},   {0.0f, +0.9f, 0.0f, -0.9f},
      {+0.9f, +0.9f, -0.3f, -0.3f}, {-0.6f, +0.6f, +0.6f, -0.6f},
  };
  std::vector<EvalCase> cases;
  cases.reserve(static_cast<size_t>(params.speaker_count) * 8);
  for (int s = 0; s < params.speaker_count; ++s) {
    for (int p = 0; p < 8; ++p) {
      uint64_t case_seed = derive_seed(seed, 0x62656e63ull, static_cast<uint64_t>(s * 8 + p + 1));
      Rng rng(case_seed);
      std::vector<int> half_tokens(params.tokens_per_half);
      for (auto& tok : half_tokens) tok = rng.uniform_int(codebook.vocab());
      const int half_frames = params.tokens_per_half * kFramesPerToken;

      UtteranceSpec a, b;
      a.tokens = half_tokens;
      a.segments = {{half_frames, kPairs[p][0], kPairs[p][1]}};
      a.speaker_id = params.speaker_id_base + static_cast<uint32_t>(s);
      b = a;
      b.segments = {{half_frames, kPairs[p][2], kPairs[p][3]}};

      EmoChangeCase ec = build_emochange_case(a, b, codebook, params.speaker_table_seed, case_seed,
                                              params.target_sentence);
      EvalCase c;
      char tag[64];
      std::snprintf(tag, sizeof(tag), "case%02d_spk%u", p, a.speaker_id);
      c.tag = tag;
      c.ref_features = std::move(ec.ref_features);
      c.ref_track = ec.ref_track;
      c.ref_tokens = std::move(ec.ref_tokens);
      c.target_tokens = std::move(ec.target_tokens);
      c.gen_track = std::move(ec.ref_track);  // reproduce the reference contour
      c.speaker_id = ec.speaker_id;
      cases.push_back(std::move(c));
    }
  }
  return cases;
}

std::vector<EvalCase> make_infill_cases(const std::vector<SynthUtterance>& utterances,
                                        int max_cases) {
  std::vector<EvalCase> cases;
  for (size_t i = 0; i < utterances.size() && static_cast<int>(cases.size()) < max_cases; ++i) {
    const SynthUtterance& u = utterances[i];
    const int n_tok = static_cast<int>(u.spec.tokens.size());
    if (n_tok < 2) continue;
    const int L = static_cast<int>(u.features.cols()) / n_tok;
    const int ref_tok = (n_tok + 1) / 2;
    const int T_ref = ref_tok * L;
    EvalCase c;
    c.tag = "infill" + std::to_string(cases.size());
    c.ref_features = u.features.leftCols(T_ref);
    c.ref_track = u.emotion.leftCols(T_ref);
    c.ref_tokens.assign(u.spec.tokens.begin(), u.spec.tokens.begin() + ref_tok);
    c.target_tokens.assign(u.spec.tokens.begin() + ref_tok, u.spec.tokens.end());
    c.gen_track = u.emotion.rightCols(u.features.cols() - T_ref);
    c.speaker_id = u.spec.speaker_id;
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<SynthUtterance> make_flowstep_samples(const Codebook& codebook, int count,
                                                  uint64_t speaker_table_seed, uint64_t seed) {
  static const float kLevels[4][2] = {{+0.9f, +0.9f}, {-0.9f, -0.9f}, {+0.9f, -0.9f}, {-0.9f, +0.9f}};
  std::vector<SynthUtterance> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, 0x666c6f77ull, static_cast<uint64_t>(i + 1)));
    UtteranceSpec s;
    s.tokens.resize(16);
    for (auto& tok : s.tokens) tok = rng.uniform_int(codebook.vocab());
    const int T = static_cast<int>(s.tokens.size()) * kFramesPerToken;
    const auto& first = kLevels[i % 4];
    const auto& second = kLevels[(i + 1 + i / 4) % 4];
    s.segments = {{T / 2, first[0], first[1]}, {T - T / 2, second[0], second[1]}};
    s.speaker_id = 3000 + static_cast<uint32_t>(i);
    s.noise_std = 0.f;
    out.push_back(gen_utterance(s, codebook, speaker_table_seed, derive_seed(seed, 0x7361u, i + 1)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Case evaluation

CaseMetrics evaluate_case(const BaseParams& base, const CtrlParams* ctrl, const EvalCase& c,
                          const SampleSchedule& schedule, const Codebook& codebook,
                          uint64_t case_seed, const std::vector<int>& skip_set) {
  EmotionTrack emotion_full;
  if (ctrl) {
    emotion_full.resize(2, c.ref_track.cols() + c.gen_track.cols());
    emotion_full << c.ref_track, c.gen_track;
    emotion_full = window_interpolate(emotion_full, ctrl->cfg.emo_window);
  }
  Rng rng(case_seed);
  const auto t0 = Clock::now();
  FeatureMatrix gen = synthesize(base, ctrl, c.ref_features, c.ref_tokens, c.target_tokens,
                                 emotion_full, schedule, rng, skip_set);
  CaseMetrics m;
  m.wall_ms = ms_since(t0);
  m.ter = ter(c.target_tokens, gen, codebook);
  m.spk_sim = speaker_sim(c.ref_features, gen, codebook);
  EmotionTrack gen_track = extract_emotion(gen, 1);
  m.emo_sim = emo_sim(c.gen_track, gen_track);
  m.av_cos = av_cos(c.gen_track, gen_track);
  return m;
}

ExperimentRecord evaluate_benchmark(const std::string& tag, const BaseParams& base,
                                    const CtrlParams* ctrl, const std::vector<EvalCase>& cases,
                                    const SampleSchedule& schedule, const Codebook& codebook,
                                    uint64_t seed, int threads, const std::vector<int>& skip_set) {
  if (cases.empty()) throw std::invalid_argument("evaluate_benchmark: no cases");
  // Warm-up run so the first timed synthesis does not pay one-time costs.
  evaluate_case(base, ctrl, cases[0], schedule, codebook, derive_seed(seed, 0xdead), skip_set);

  std::vector<CaseMetrics> metrics(cases.size());
  parallel_for(
      cases.size(),
      [&](size_t i) {
        metrics[i] = evaluate_case(base, ctrl, cases[i], schedule, codebook,
                                   derive_seed(seed, 0x63617365ull, i + 1), skip_set);
      },
      threads);

  ExperimentRecord r;
  r.config_tag = tag;
  for (const auto& m : metrics) {
    r.ter += m.ter;
    r.spk_sim += m.spk_sim;
    r.emo_sim += m.emo_sim;
    r.av_cos += m.av_cos;
    r.wall_ms += m.wall_ms;
  }
  const double n = static_cast<double>(cases.size());
  r.ter /= n;
  r.spk_sim /= n;
  r.emo_sim /= n;
  r.av_cos /= n;
  r.wall_ms /= n;
  return r;
}

// ---------------------------------------------------------------------------
// Block importance scan

std::string scan_to_csv(const std::vector<BlockScanRow>& rows) {
  std::string out = std::string(kRecordCsvHeader) + ",block_index,delta_ter,delta_spk_sim\n";
  char buf[96];
  for (const auto& r : rows) {
    out += r.config_tag;
    append_fields(out, r.ter, r.spk_sim, r.emo_sim, r.av_cos, r.wall_ms);
    std::snprintf(buf, sizeof(buf), ",%d,%.9g,%.9g\n", r.block_index, r.delta_ter, r.delta_spk_sim);
    out += buf;
  }
  return out;
}

std::vector<BlockScanRow> block_importance_scan(const BaseParams& base,
                                                const std::vector<EvalCase>& cases,
                                                const SampleSchedule& schedule,
                                                const Codebook& codebook, uint64_t seed,
                                                int threads) {
  const int B = base.cfg.B;
  std::vector<BlockScanRow> rows(static_cast<size_t>(B) + 1);
  // Baseline plus one config per skipped block; same per-case seeds so deltas
  // isolate the skip.
  parallel_for(
      static_cast<size_t>(B) + 1,
      [&](size_t i) {
        std::vector<int> skip;
        std::string tag = "baseline";
        if (i > 0) {
          skip = {static_cast<int>(i - 1)};
          tag = "skip" + std::to_string(i - 1);
        }
        ExperimentRecord rec =
            evaluate_benchmark(tag, base, nullptr, cases, schedule, codebook, seed, 1, skip);
        BlockScanRow& row = rows[i];
        row.config_tag = rec.config_tag;
        row.ter = rec.ter;
        row.spk_sim = rec.spk_sim;
        row.emo_sim = rec.emo_sim;
        row.av_cos = rec.av_cos;
        row.wall_ms = rec.wall_ms;
        row.block_index = static_cast<int>(i) - 1;
      },
      threads);

  const BlockScanRow baseline = rows[0];
  for (auto& row : rows) {
    row.delta_ter = row.ter - baseline.ter;
    row.delta_spk_sim = row.spk_sim - baseline.spk_sim;
  }
  std::stable_sort(rows.begin() + 1, rows.end(), [](const BlockScanRow& a, const BlockScanRow& b) {
    if (a.delta_ter != b.delta_ter) return a.delta_ter > b.delta_ter;
    return a.block_index < b.block_index;
  });
  return rows;
}

std::vector<int> critical_blocks(const std::vector<BlockScanRow>& rows, int count) {
  std::vector<int> out;
  for (const auto& row : rows) {
    if (row.block_index < 0) continue;
    out.push_back(row.block_index);
    if (static_cast<int>(out.size()) == count) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flow-step analysis

std::vector<double> default_t_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 20; ++i) g.push_back(static_cast<double>(i) * 0.05);
  return g;
}

std::string flowstep_to_csv(const FlowStepResult& result) {
  std::string out = std::string(kRecordCsvHeader) + ",t\n";
  char buf[160];
  for (const auto& r : result.rows) {
    std::snprintf(buf, sizeof(buf), "t=%.3f,%.9g,%.9g,%.9g,%.9g,%.3f,%.9g\n", r.t, r.ter, r.spk_sim,
                  r.emo_sim, r.av_cos, r.wall_ms, r.t);
    out += buf;
  }
  return out;
}

FlowStepResult flowstep_analysis(const BaseParams& base, const std::vector<SynthUtterance>& samples,
                                 const std::vector<double>& t_grid, int draws, int nfe,
                                 const Codebook& codebook, uint64_t seed, int threads, double tau) {
  if (t_grid.empty()) throw std::invalid_argument("flowstep_analysis: empty t grid");
  if (draws < 4) throw std::invalid_argument("flowstep_analysis: need at least 4 noise draws per sample");
  for (size_t i = 1; i < t_grid.size(); ++i) {
    if (t_grid[i] <= t_grid[i - 1]) throw std::invalid_argument("flowstep_analysis: t grid must be sorted");
  }

  // Reconstruction uses text-only generation: the whole sequence is masked,
  // so the resampled emotion can only come from the intermediate flow state.
  struct Job {
    size_t sample;
    int draw;
    size_t t_index;
  };
  std::vector<Job> jobs;
  for (size_t ti = 0; ti < t_grid.size(); ++ti) {
    for (size_t s = 0; s < samples.size(); ++s) {
      for (int d = 0; d < draws; ++d) jobs.push_back({s, d, ti});
    }
  }
  struct JobOut {
    double emo = 0.0, av = 0.0, ter_v = 0.0, spk = 0.0, wall = 0.0;
  };
  std::vector<JobOut> outs(jobs.size());

  parallel_for(
      jobs.size(),
      [&](size_t j) {
        const Job& job = jobs[j];
        const SynthUtterance& u = samples[job.sample];
        const int T = static_cast<int>(u.features.cols());
        Matf masked_in = Matf::Zero(u.features.rows(), T);
        TemporalMask mask = TemporalMask::Ones(T);
        FieldFn field_fn = [&](const Matf& x, double t, double) -> Matf {
          BaseTape<float> tape;
          forward_base(x, masked_in, u.spec.tokens, t, base, {}, tape);
          return tape.field;
        };
        Rng rng(derive_seed(seed, 0x7273ull + job.sample * 131 + job.draw, job.t_index + 1));
        const auto t0 = Clock::now();
        Matf recon = partial_resample(u.features, t_grid[job.t_index], field_fn, nfe, rng);
        JobOut& o = outs[j];
        o.wall = ms_since(t0);
        // Both sides go through the same extractor, so a bit-exact resample
        // (t_start = 1) scores exactly 1.
        EmotionTrack ref_track = extract_emotion(u.features, 1);
        EmotionTrack track = extract_emotion(recon, 1);
        o.emo = emo_sim(ref_track, track);
        o.av = av_cos(ref_track, track);
        o.ter_v = ter(u.spec.tokens, recon, codebook);
        o.spk = speaker_sim(u.features, recon, codebook);
      },
      threads);

  FlowStepResult result;
  result.rows.resize(t_grid.size());
  const double per_t = static_cast<double>(samples.size() * draws);
  for (size_t j = 0; j < jobs.size(); ++j) {
    FlowStepRow& row = result.rows[jobs[j].t_index];
    row.emo_sim += outs[j].emo / per_t;
    row.av_cos += outs[j].av / per_t;
    row.ter += outs[j].ter_v / per_t;
    row.spk_sim += outs[j].spk / per_t;
    row.wall_ms += outs[j].wall / per_t;
  }
  for (size_t ti = 0; ti < t_grid.size(); ++ti) result.rows[ti].t = t_grid[ti];

  const double reference = result.rows.back().emo_sim;
  result.t_emo_hat = t_grid.back();
  for (const auto& row : result.rows) {
    if (row.emo_sim >= tau * reference) {
      result.t_emo_hat = row.t;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Control-scale sweep

std::vector<ExperimentRecord> scale_sweep(const BaseParams& base, const CtrlParams& ctrl,
                                          const std::vector<EvalCase>& cases,
                                          const std::vector<double>& lambda_grid, int nfe,
                                          const Codebook& codebook, uint64_t seed, int threads) {
  std::vector<ExperimentRecord> records;
  records.reserve(lambda_grid.size());
  for (double lambda : lambda_grid) {
    SampleSchedule sched;
    sched.nfe = nfe;
    sched.lambda = lambda;
    sched.interval = {0.0, ctrl.cfg.t_emo};
    char tag[48];
    std::snprintf(tag, sizeof(tag), "lambda=%.3g", lambda);
    records.push_back(
        evaluate_benchmark(tag, base, &ctrl, cases, sched, codebook, seed, threads));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Ablations

AblationOutcome run_ablation(AblationKind kind, const CtrlConfig& reference,
                             const std::vector<SynthUtterance>& dataset, const BaseParams& base,
                             const TrainConfig& train_template,
                             const std::vector<EvalCase>& benchmark, int nfe,
                             const Codebook& codebook, uint64_t eval_seed, int threads) {
  std::vector<std::pair<std::string, CtrlConfig>> variants;
  {
    CtrlConfig alt = reference;
    switch (kind) {
      case AblationKind::interval: {
        char tag[48];
        std::snprintf(tag, sizeof(tag), "interval[0,%.3g]", reference.t_emo);
        alt.t_emo = 1.0;
        variants = {{tag, reference}, {"interval[0,1]", alt}};
        break;
      }
      case AblationKind::window: {
        alt.emo_window = 1;
        variants = {{"window=" + std::to_string(reference.emo_window), reference},
                    {"window=1", alt}};
        break;
      }
      case AblationKind::selective: {
        alt.blocks = CtrlConfig::all_blocks(base.cfg.B);
        std::string tag = "blocks=";
        for (size_t i = 0; i < reference.blocks.size(); ++i) {
          tag += (i ? "|" : "") + std::to_string(reference.blocks[i]);
        }
        variants = {{tag, reference}, {"blocks=all", alt}};
        break;
      }
    }
  }

  AblationOutcome out;
  for (const auto& [tag, cfg] : variants) {
    TrainConfig tc = train_template;
    tc.phase = TrainConfig::Phase::ctrlnet;
    tc.flow_interval = {0.0, cfg.t_emo};
    tc.threads = threads;
    CtrlTrainResult trained = train_ctrlnet(dataset, base, cfg, tc);

    SampleSchedule sched;
    sched.nfe = nfe;
    sched.lambda = cfg.lambda_default;
    sched.interval = {0.0, cfg.t_emo};
    ExperimentRecord rec = evaluate_benchmark(tag, base, &trained.params, benchmark, sched,
                                              codebook, eval_seed, threads);
    out.tags.push_back(tag);
    out.models.push_back(std::move(trained.params));
    out.records.push_back(std::move(rec));
  }
  return out;
}

}  // namespace flowctl
