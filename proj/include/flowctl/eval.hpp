#pragma once

// Oracle metrics (token error rate, speaker similarity, two emotion
// similarities), reference-prompted synthesis, the emotion-change benchmark,
// and the experiment engines: per-block importance scan, flow-step
// reconstruction analysis, control-scale sweep and the train-and-compare
// ablations.

#include "flowctl/ctrlnet.hpp"
#include "flowctl/flow.hpp"
#include "flowctl/synthdata.hpp"
#include "flowctl/train.hpp"

#include <string>
#include <vector>

namespace flowctl {

struct ExperimentRecord {
  std::string config_tag;
  double ter = 0.0;
  double spk_sim = 0.0;
  double emo_sim = 0.0;
  double av_cos = 0.0;
  double wall_ms = 0.0;
};

constexpr char kRecordCsvHeader[] = "config_tag,ter,spk_sim,emo_sim,av_cos,wall_ms";

std::string records_to_csv(const std::vector<ExperimentRecord>& records);

// ---------------------------------------------------------------------------
// Metrics

// Fraction of token windows where the decoded tokens disagree with the
// reference sequence.
double ter(const std::vector<int>& ref_tokens, const FeatureMatrix& gen_features,
           const Codebook& codebook, int frames_per_token = kFramesPerToken);

// Linear per-channel resampling to a target length.
EmotionTrack resample_track(const EmotionTrack& track, int new_length);

// 1 - RMSE/2 averaged over the two channels; 1.0 for identical tracks, 0.0
// for constant +1 against constant -1. Tracks of different lengths are
// resampled to the reference length.
double emo_sim(const EmotionTrack& ref, const EmotionTrack& gen);

// Cosine similarity between per-channel mean-centered tracks after smoothing
// both with window_interpolate; 0 when either centered track has zero norm.
double av_cos(const EmotionTrack& ref, const EmotionTrack& gen, int window = 8);

// Cosine similarity between the speaker-offset estimates of the two feature
// matrices; 0 on zero-norm estimates.
double speaker_sim(const FeatureMatrix& ref_features, const FeatureMatrix& gen_features,
                   const Codebook& codebook, int frames_per_token = kFramesPerToken);

// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// ---------------------------------------------------------------------------
// Synthesis

// Reference-prompted generation: builds a full-length Gaussian x0, masks the
// generated region, concatenates reference and target tokens, integrates the
// (joint) field and returns the generated frames. `ctrl` may be null for
// base-only synthesis; `skip_set` bypasses base blocks (scan support).
FeatureMatrix synthesize(const BaseParams& base, const CtrlParams* ctrl,
                         const FeatureMatrix& ref_features, const std::vector<int>& ref_tokens,
                         const std::vector<int>& target_tokens, const EmotionTrack& emotion_full,
                         const SampleSchedule& schedule, Rng& rng,
                         const std::vector<int>& skip_set = {});

// ---------------------------------------------------------------------------
// Benchmark

struct EvalCase {
  std::string tag;
  FeatureMatrix ref_features;
  EmotionTrack ref_track;
  std::vector<int> ref_tokens;
  std::vector<int> target_tokens;
  EmotionTrack gen_track;  // commanded emotion for the generated region
  uint32_t speaker_id = 0;
};

struct BenchmarkParams {
  int speaker_count = 8;
  uint32_t speaker_id_base = 2000;  // outside every training speaker range
  int tokens_per_half = 8;
  uint64_t speaker_table_seed = 99;
  std::vector<int> target_sentence = {1, 2, 3, 4, 5, 6, 7, 8};
};

// speaker_count x 8 emotion-change cases (8 fixed arousal/valence pairs).
std::vector<EvalCase> make_benchmark(const Codebook& codebook, const BenchmarkParams& params,
                                     uint64_t seed);

// Infilling cases from existing utterances: the first half of the tokens is
// the reference, the rest is generated. Utterances with fewer than two tokens
// are skipped.
std::vector<EvalCase> make_infill_cases(const std::vector<SynthUtterance>& utterances,
                                        int max_cases);

// Single-utterance samples with strong two-segment emotion contours, used by
// the flow-step reconstruction analysis.
std::vector<SynthUtterance> make_flowstep_samples(const Codebook& codebook, int count,
                                                  uint64_t speaker_table_seed, uint64_t seed);

struct CaseMetrics {
  double ter = 0.0;
  double spk_sim = 0.0;
  double emo_sim = 0.0;
  double av_cos = 0.0;
  double wall_ms = 0.0;
};

// Synthesizes one case and scores the generated region. The conditioning
// track is smoothed with the control branch's window before synthesis;
// scoring always compares against the raw commanded track.
CaseMetrics evaluate_case(const BaseParams& base, const CtrlParams* ctrl, const EvalCase& c,
                          const SampleSchedule& schedule, const Codebook& codebook,
                          uint64_t case_seed, const std::vector<int>& skip_set = {});

// Mean metrics over all cases; wall_ms is the mean per-synthesis time after
// one discarded warm-up run.
ExperimentRecord evaluate_benchmark(const std::string& tag, const BaseParams& base,
                                    const CtrlParams* ctrl, const std::vector<EvalCase>& cases,
                                    const SampleSchedule& schedule, const Codebook& codebook,
                                    uint64_t seed, int threads = 0,
                                    const std::vector<int>& skip_set = {});

// ---------------------------------------------------------------------------
// Experiment engines

struct BlockScanRow {
  std::string config_tag;
  double ter = 0.0;
  double spk_sim = 0.0;
  double emo_sim = 0.0;
  double av_cos = 0.0;
  double wall_ms = 0.0;
  int block_index = -1;  // -1 tags the no-skip baseline
  double delta_ter = 0.0;
  double delta_spk_sim = 0.0;
};

std::string scan_to_csv(const std::vector<BlockScanRow>& rows);

// Synthesizes the cases once per skipped block and reports metric deltas
// against the no-skip baseline, sorted by delta_ter descending (ties by block
// index). The baseline row leads the output.
std::vector<BlockScanRow> block_importance_scan(const BaseParams& base,
                                                const std::vector<EvalCase>& cases,
                                                const SampleSchedule& schedule,
                                                const Codebook& codebook, uint64_t seed,
                                                int threads = 0);

// Top `count` block indices by delta_ter from a scan result.
std::vector<int> critical_blocks(const std::vector<BlockScanRow>& rows, int count);

struct FlowStepRow {
  double t = 0.0;
  double emo_sim = 0.0;
  double av_cos = 0.0;
  double ter = 0.0;
  double spk_sim = 0.0;
  double wall_ms = 0.0;
};

struct FlowStepResult {
  std::vector<FlowStepRow> rows;
  double t_emo_hat = 1.0;  // smallest grid t whose emo_sim reaches tau * emo_sim(1)
};

std::string flowstep_to_csv(const FlowStepResult& result);

std::vector<double> default_t_grid();

// Partially resamples every sample from each grid t with `draws` noise
// vectors and measures reconstruction fidelity against the original.
FlowStepResult flowstep_analysis(const BaseParams& base,
                                 const std::vector<SynthUtterance>& samples,
                                 const std::vector<double>& t_grid, int draws, int nfe,
                                 const Codebook& codebook, uint64_t seed, int threads = 0,
                                 double tau = 0.9);

// One benchmark record per control scale.
std::vector<ExperimentRecord> scale_sweep(const BaseParams& base, const CtrlParams& ctrl,
                                          const std::vector<EvalCase>& cases,
                                          const std::vector<double>& lambda_grid, int nfe,
                                          const Codebook& codebook, uint64_t seed,
                                          int threads = 0);

enum class AblationKind { interval, window, selective };

struct AblationOutcome {
  std::vector<std::string> tags;
  std::vector<CtrlParams> models;
  std::vector<ExperimentRecord> records;
};

// Trains one control branch per variant (same seed and steps) and evaluates
// each on the benchmark. The reference config is always the first variant;
// the second differs only in the ablated dimension (full interval, window 1,
// or all blocks).
AblationOutcome run_ablation(AblationKind kind, const CtrlConfig& reference,
                             const std::vector<SynthUtterance>& dataset, const BaseParams& base,
                             const TrainConfig& train_template,
                             const std::vector<EvalCase>& benchmark, int nfe,
                             const Codebook& codebook, uint64_t eval_seed, int threads = 0);

}  // namespace flowctl
