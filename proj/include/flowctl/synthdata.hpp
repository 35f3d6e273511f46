#pragma once

// Synthetic utterance domain.
//
// A feature matrix is an F x T "spectrogram" split into three row bands:
//   rows [0, F/2)        content  - each L-frame token window repeats one
//                                   unit-norm codebook pattern
//   rows [F/2, 3F/4)     arousal  - every entry equals (1 + a_t) / 2
//   rows [3F/4, F)       valence  - every entry equals (1 + v_t) / 2
// plus an additive per-speaker offset vector and optional i.i.d. noise.
//
// The construction is exactly invertible: decode_tokens, extract_emotion and
// estimate_speaker recover tokens, the (a, v) track and the speaker offset
// from noiseless features, which makes them oracle metrics for generation.

#include "flowctl/common.hpp"

#include <vector>

namespace flowctl {

using FeatureMatrix = Matf;   // F x T
using EmotionTrack = Matf;    // 2 x T, row 0 arousal, row 1 valence
using TemporalMask = Vecf;    // T entries in {0, 1}; 1 marks the infilled region

constexpr int kDefaultF = 16;
constexpr int kDefaultVocab = 16;
constexpr int kFramesPerToken = 4;
constexpr int kRampFrames = 4;           // linear ramp width at segment boundaries
constexpr float kSpeakerAmplitude = 0.5f;

inline int content_rows(int F) { return F / 2; }
inline int emotion_rows(int F) { return F / 4; }
inline int arousal_row0(int F) { return F / 2; }
inline int valence_row0(int F) { return F / 2 + F / 4; }

struct EmotionSegment {
  int length_frames = 0;
  float arousal = 0.f;   // in [-1, 1]
  float valence = 0.f;   // in [-1, 1]
};

struct UtteranceSpec {
  std::vector<int> tokens;
  std::vector<EmotionSegment> segments;
  uint32_t speaker_id = 0;
  float noise_std = 0.f;

  int total_frames() const {
    int n = 0;
    for (const auto& s : segments) n += s.length_frames;
    return n;
  }
};

// V unit-norm content patterns with bounded pairwise cosine, deterministic in
// rng_seed. Token id V (one past the last column) is reserved: decode emits it
// for unrecognizable windows and render() draws it as silence.
struct Codebook {
  Matf patterns;  // f_content x V, unit-norm columns
  uint64_t rng_seed = 0;

  int vocab() const { return static_cast<int>(patterns.cols()); }
  int reserved_token() const { return vocab(); }
};

Codebook make_codebook(int f_content, int vocab, uint64_t rng_seed);

struct SynthUtterance {
  FeatureMatrix features;
  UtteranceSpec spec;
  EmotionTrack emotion;  // ground truth, pre-noise
};

// Per-speaker additive offset: a fixed random direction of L2 norm `amplitude`,
// centered within each row band so band means (and hence the emotion and token
// oracles) are unaffected.
Vecf speaker_offset(int F, uint64_t table_seed, uint32_t speaker_id,
                    float amplitude = kSpeakerAmplitude);

// Per-frame (a_t, v_t) from piecewise-constant segments with linear ramps of
// `ramp` frames centered at each internal boundary.
EmotionTrack segments_to_track(const std::vector<EmotionSegment>& segments,
                               int ramp = kRampFrames);

SynthUtterance gen_utterance(const UtteranceSpec& spec, const Codebook& codebook,
                             uint64_t speaker_table_seed, uint64_t noise_seed,
                             int frames_per_token = kFramesPerToken,
                             float speaker_amplitude = kSpeakerAmplitude);

// Noiseless features for (tokens, track) with zero speaker offset. The
// reserved token id renders a zero content window.
FeatureMatrix render(const std::vector<int>& tokens, const EmotionTrack& track,
                     const Codebook& codebook, int frames_per_token = kFramesPerToken);

// Centered sliding-window mean per channel; window 1 is the identity and
// window >= 2T-1 yields the global mean in every frame. Edges are clamped
// (partial windows average over the available frames).
EmotionTrack window_interpolate(const EmotionTrack& track, int window);

// Inverts the emotion bands: a_hat = clamp(2 * mean(arousal rows) - 1, -1, 1)
// per frame (valence analogous), then window_interpolate. Windows larger than
// T are clamped to T.
EmotionTrack extract_emotion(const FeatureMatrix& features, int window);

// Per token window, the codebook pattern with the highest cosine similarity to
// the window-mean content vector; ties go to the lowest id, zero-norm windows
// to the reserved id.
std::vector<int> decode_tokens(const FeatureMatrix& features, const Codebook& codebook,
                               int frames_per_token = kFramesPerToken);

// Temporal mean of (features - render(decoded tokens, extracted track)): on
// noiseless input this is exactly the speaker offset.
Vecf estimate_speaker(const FeatureMatrix& features, const Codebook& codebook,
                      int frames_per_token = kFramesPerToken);

// An emotion-change evaluation case: two single-emotion utterances of the same
// speaker concatenated as the reference, plus target tokens sized to the
// combined duration.
struct EmoChangeCase {
  FeatureMatrix ref_features;
  EmotionTrack ref_track;
  std::vector<int> ref_tokens;
  std::vector<int> target_tokens;
  uint32_t speaker_id = 0;
};

EmoChangeCase build_emochange_case(const UtteranceSpec& spec_a, const UtteranceSpec& spec_b,
                                   const Codebook& codebook, uint64_t speaker_table_seed,
                                   uint64_t case_seed, const std::vector<int>& target_sentence,
                                   int frames_per_token = kFramesPerToken);

// Random corpus generation for training / held-out sets.
struct CorpusParams {
  int count = 768;
  int min_tokens = 8;
  int max_tokens = 16;
  int max_segments = 3;
  int min_segment_frames = 8;
  float noise_std = 0.f;
  int vocab = kDefaultVocab;
  int frames_per_token = kFramesPerToken;
  uint32_t speaker_id_base = 0;
  int speakers = 16;
};

std::vector<UtteranceSpec> make_corpus_specs(const CorpusParams& params, uint64_t seed);

}  // namespace flowctl
