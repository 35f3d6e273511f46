#include "flowctl/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flowctl {

namespace {

void check_band_layout(int F) {
  if (F < 4 || F % 4 != 0) {
    throw std::invalid_argument("feature rows F must be a positive multiple of 4");
  }
}

void validate_spec(const UtteranceSpec& spec, int vocab, int frames_per_token) {
  if (spec.tokens.empty()) throw std::invalid_argument("utterance spec: empty token sequence");
  for (int tok : spec.tokens) {
    if (tok < 0 || tok >= vocab) throw std::invalid_argument("utterance spec: token id out of range");
  }
  if (spec.segments.empty()) throw std::invalid_argument("utterance spec: no emotion segments");
  int total = 0;
  for (const auto& s : spec.segments) {
    if (s.length_frames <= 0) throw std::invalid_argument("utterance spec: non-positive segment length");
    if (std::abs(s.arousal) > 1.f || std::abs(s.valence) > 1.f) {
      throw std::invalid_argument("utterance spec: arousal/valence outside [-1, 1]");
    }
    total += s.length_frames;
  }
  if (total != static_cast<int>(spec.tokens.size()) * frames_per_token) {
    throw std::invalid_argument("utterance spec: segment frames do not sum to tokens * frames_per_token");
  }
  if (spec.noise_std < 0.f) throw std::invalid_argument("utterance spec: negative noise_std");
}

}  // namespace

Codebook make_codebook(int f_content, int vocab, uint64_t rng_seed) {
  if (f_content < 2 || vocab < 1) throw std::invalid_argument("make_codebook: bad dimensions");
  Codebook cb;
  cb.rng_seed = rng_seed;
  cb.patterns.resize(f_content, vocab);
  Rng rng(derive_seed(rng_seed, 0x636f6465));
  // Rejection-sample unit vectors with pairwise |cos| below 0.8 so decoding
  // survives small perturbations.
  const double max_cos = 0.8;
  for (int v = 0; v < vocab; ++v) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 20000) throw std::runtime_error("make_codebook: separation unsatisfiable");
      ColVec<double> cand(f_content);
      for (int i = 0; i < f_content; ++i) cand(i) = rng.normal();
      double n = cand.norm();
      if (n < 1e-9) continue;
      cand /= n;
      bool ok = true;
      for (int u = 0; u < v && ok; ++u) {
        double c = cand.dot(cb.patterns.col(u).cast<double>());
        if (std::abs(c) > max_cos) ok = false;
      }
      if (ok) {
        cb.patterns.col(v) = cand.cast<float>();
        break;
      }
    }
  }
  return cb;
}

Vecf speaker_offset(int F, uint64_t table_seed, uint32_t speaker_id, float amplitude) {
  check_band_layout(F);
  Rng rng(derive_seed(table_seed, 0x73706b00ull + speaker_id));
  ColVec<double> v(F);
  for (int i = 0; i < F; ++i) v(i) = rng.normal();
  // Remove the per-band mean so band-mean decoders see no speaker component.
  const int fc = content_rows(F), fe = emotion_rows(F);
  auto center = [&](int start, int len) {
    double m = v.segment(start, len).mean();
    v.segment(start, len).array() -= m;
  };
  center(0, fc);
  center(arousal_row0(F), fe);
  center(valence_row0(F), fe);
  double n = v.norm();
  if (n < 1e-12) return Vecf::Zero(F);
  return (v * (amplitude / n)).cast<float>();
}

EmotionTrack segments_to_track(const std::vector<EmotionSegment>& segments, int ramp) {
  int T = 0;
  for (const auto& s : segments) T += s.length_frames;
  EmotionTrack track(2, T);
  int pos = 0;
  for (const auto& s : segments) {
    track.block(0, pos, 1, s.length_frames).setConstant(s.arousal);
    track.block(1, pos, 1, s.length_frames).setConstant(s.valence);
    pos += s.length_frames;
  }
  // Linear ramps straddling each internal boundary: ramp frames take values
  // strictly between the adjacent segment levels.
  int boundary = 0;
  for (size_t i = 0; i + 1 < segments.size(); ++i) {
    boundary += segments[i].length_frames;
    for (int j = 0; j < ramp; ++j) {
      int frame = boundary - ramp / 2 + j;
      if (frame < 0 || frame >= T) continue;
      float w = static_cast<float>(j + 1) / static_cast<float>(ramp + 1);
      track(0, frame) = segments[i].arousal + w * (segments[i + 1].arousal - segments[i].arousal);
      track(1, frame) = segments[i].valence + w * (segments[i + 1].valence - segments[i].valence);
    }
  }
  return track;
}

SynthUtterance gen_utterance(const UtteranceSpec& spec, const Codebook& codebook,
                             uint64_t speaker_table_seed, uint64_t noise_seed,
                             int frames_per_token, float speaker_amplitude) {
  const int fc = codebook.patterns.rows();
  const int F = fc * 2;
  check_band_layout(F);
  validate_spec(spec, codebook.vocab(), frames_per_token);

  const int T = spec.total_frames();
  EmotionTrack track = segments_to_track(spec.segments);

  FeatureMatrix x(F, T);
  for (size_t i = 0; i < spec.tokens.size(); ++i) {
    for (int j = 0; j < frames_per_token; ++j) {
      x.col(static_cast<int>(i) * frames_per_token + j).head(fc) = codebook.patterns.col(spec.tokens[i]);
    }
  }
  const int fe = emotion_rows(F);
  for (int t = 0; t < T; ++t) {
    x.col(t).segment(arousal_row0(F), fe).setConstant((1.f + track(0, t)) * 0.5f);
    x.col(t).segment(valence_row0(F), fe).setConstant((1.f + track(1, t)) * 0.5f);
  }

  if (speaker_amplitude != 0.f) {
    Vecf sigma = speaker_offset(F, speaker_table_seed, spec.speaker_id, speaker_amplitude);
    x.colwise() += sigma;
  }
  if (spec.noise_std > 0.f) {
    Rng rng(derive_seed(noise_seed, 0x6e6f6973));
    for (int t = 0; t < T; ++t) {
      for (int f = 0; f < F; ++f) x(f, t) += spec.noise_std * static_cast<float>(rng.normal());
    }
  }
  return SynthUtterance{std::move(x), spec, std::move(track)};
}

FeatureMatrix render(const std::vector<int>& tokens, const EmotionTrack& track,
                     const Codebook& codebook, int frames_per_token) {
  const int fc = codebook.patterns.rows();
  const int F = fc * 2;
  const int T = static_cast<int>(track.cols());
  if (static_cast<int>(tokens.size()) * frames_per_token != T) {
    throw std::invalid_argument("render: track length does not match tokens");
  }
  FeatureMatrix x = FeatureMatrix::Zero(F, T);
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] > codebook.vocab()) throw std::invalid_argument("render: token id out of range");
    if (tokens[i] == codebook.reserved_token()) continue;
    for (int j = 0; j < frames_per_token; ++j) {
      x.col(static_cast<int>(i) * frames_per_token + j).head(fc) = codebook.patterns.col(tokens[i]);
    }
  }
  const int fe = emotion_rows(F);
  for (int t = 0; t < T; ++t) {
    x.col(t).segment(arousal_row0(F), fe).setConstant((1.f + track(0, t)) * 0.5f);
    x.col(t).segment(valence_row0(F), fe).setConstant((1.f + track(1, t)) * 0.5f);
  }
  return x;
}

EmotionTrack window_interpolate(const EmotionTrack& track, int window) {
  if (window < 1) throw std::invalid_argument("window_interpolate: window must be >= 1");
  const int T = static_cast<int>(track.cols());
  if (window == 1 || T == 0) return track;
  const int half = window / 2;
  EmotionTrack out(track.rows(), T);
  for (int c = 0; c < track.rows(); ++c) {
    // Prefix sums in double keep the sliding means exact to float precision.
    std::vector<double> prefix(static_cast<size_t>(T) + 1, 0.0);
    for (int t = 0; t < T; ++t) prefix[t + 1] = prefix[t] + static_cast<double>(track(c, t));
    for (int t = 0; t < T; ++t) {
      int lo = std::max(0, t - half);
      int hi = std::min(T - 1, t + half);
      out(c, t) = static_cast<float>((prefix[hi + 1] - prefix[lo]) / (hi - lo + 1));
    }
  }
  return out;
}

EmotionTrack extract_emotion(const FeatureMatrix& features, int window) {
  if (window < 1) throw std::invalid_argument("extract_emotion: window must be >= 1");
  const int F = static_cast<int>(features.rows());
  check_band_layout(F);
  const int T = static_cast<int>(features.cols());
  const int fe = emotion_rows(F);
  EmotionTrack raw(2, T);
  for (int t = 0; t < T; ++t) {
    float a = features.col(t).segment(arousal_row0(F), fe).mean();
    float v = features.col(t).segment(valence_row0(F), fe).mean();
    raw(0, t) = std::clamp(2.f * a - 1.f, -1.f, 1.f);
    raw(1, t) = std::clamp(2.f * v - 1.f, -1.f, 1.f);
  }
  return window_interpolate(raw, std::min(window, std::max(T, 1)));
}

std::vector<int> decode_tokens(const FeatureMatrix& features, const Codebook& codebook,
                               int frames_per_token) {
  const int fc = codebook.patterns.rows();
  const int T = static_cast<int>(features.cols());
  if (T % frames_per_token != 0) throw std::invalid_argument("decode_tokens: frame count not divisible by L");
  const int n = T / frames_per_token;
  std::vector<int> tokens(n);
  for (int i = 0; i < n; ++i) {
    ColVec<double> mean = ColVec<double>::Zero(fc);
    for (int j = 0; j < frames_per_token; ++j) {
      mean += features.col(i * frames_per_token + j).head(fc).cast<double>();
    }
    mean /= frames_per_token;
    double norm = mean.norm();
    if (norm == 0.0) {
      tokens[i] = codebook.reserved_token();
      continue;
    }
    int best = 0;
    double best_cos = -2.0;
    for (int v = 0; v < codebook.vocab(); ++v) {
      double c = mean.dot(codebook.patterns.col(v).cast<double>()) / norm;
      if (c > best_cos) {
        best_cos = c;
        best = v;
      }
    }
    tokens[i] = best;
  }
  return tokens;
}

Vecf estimate_speaker(const FeatureMatrix& features, const Codebook& codebook, int frames_per_token) {
  std::vector<int> tokens = decode_tokens(features, codebook, frames_per_token);
  EmotionTrack track = extract_emotion(features, 1);
  FeatureMatrix ideal = render(tokens, track, codebook, frames_per_token);
  return (features - ideal).rowwise().mean();
}

EmoChangeCase build_emochange_case(const UtteranceSpec& spec_a, const UtteranceSpec& spec_b,
                                   const Codebook& codebook, uint64_t speaker_table_seed,
                                   uint64_t case_seed, const std::vector<int>& target_sentence,
                                   int frames_per_token) {
  if (spec_a.speaker_id != spec_b.speaker_id) {
    throw std::invalid_argument("build_emochange_case: speaker ids differ");
  }
  if (spec_a.segments.size() != 1 || spec_b.segments.size() != 1) {
    throw std::invalid_argument("build_emochange_case: specs must be single-emotion");
  }
  if (target_sentence.empty()) throw std::invalid_argument("build_emochange_case: empty target sentence");

  SynthUtterance a = gen_utterance(spec_a, codebook, speaker_table_seed, derive_seed(case_seed, 1), frames_per_token);
  SynthUtterance b = gen_utterance(spec_b, codebook, speaker_table_seed, derive_seed(case_seed, 2), frames_per_token);

  EmoChangeCase out;
  out.speaker_id = spec_a.speaker_id;
  const int Ta = static_cast<int>(a.features.cols());
  const int Tb = static_cast<int>(b.features.cols());
  out.ref_features.resize(a.features.rows(), Ta + Tb);
  out.ref_features << a.features, b.features;
  out.ref_track.resize(2, Ta + Tb);
  out.ref_track << a.emotion, b.emotion;
  out.ref_tokens = spec_a.tokens;
  out.ref_tokens.insert(out.ref_tokens.end(), spec_b.tokens.begin(), spec_b.tokens.end());

  const int n_target = (Ta + Tb) / frames_per_token;
  out.target_tokens.resize(n_target);
  for (int i = 0; i < n_target; ++i) out.target_tokens[i] = target_sentence[i % target_sentence.size()];
  return out;
}

std::vector<UtteranceSpec> make_corpus_specs(const CorpusParams& p, uint64_t seed) {
  if (p.count < 1 || p.min_tokens < 1 || p.max_tokens < p.min_tokens) {
    throw std::invalid_argument("make_corpus_specs: bad counts");
  }
  std::vector<UtteranceSpec> specs;
  specs.reserve(p.count);
  for (int i = 0; i < p.count; ++i) {
    Rng rng(derive_seed(seed, 0x75747400ull + static_cast<uint64_t>(i)));
    UtteranceSpec s;
    int n_tok = p.min_tokens + rng.uniform_int(p.max_tokens - p.min_tokens + 1);
    s.tokens.resize(n_tok);
    for (int j = 0; j < n_tok; ++j) s.tokens[j] = rng.uniform_int(p.vocab);
    const int T = n_tok * p.frames_per_token;
    int max_segs = std::max(1, std::min(p.max_segments, T / p.min_segment_frames));
    int n_seg = 1 + rng.uniform_int(max_segs);
    std::vector<int> lengths(n_seg, p.min_segment_frames);
    int rest = T - n_seg * p.min_segment_frames;
    for (int j = 0; j + 1 < n_seg; ++j) {
      int extra = rng.uniform_int(rest + 1);
      lengths[j] += extra;
      rest -= extra;
    }
    lengths[n_seg - 1] += rest;
    s.segments.resize(n_seg);
    for (int j = 0; j < n_seg; ++j) {
      s.segments[j].length_frames = lengths[j];
      s.segments[j].arousal = static_cast<float>(rng.uniform(-1.0, 1.0));
      s.segments[j].valence = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    s.speaker_id = p.speaker_id_base + static_cast<uint32_t>(rng.uniform_int(p.speakers));
    s.noise_std = p.noise_std;
    specs.push_back(std::move(s));
  }
  return specs;
}

}  // namespace flowctl
