#include "flowctl/synthdata.hpp"

#include <doctest.h>

using namespace flowctl;

namespace {

Codebook test_codebook() { return make_codebook(8, 16, 1234); }

UtteranceSpec single_segment_spec(float a, float v, int n_tokens = 4, uint32_t speaker = 0) {
  UtteranceSpec s;
  s.tokens.resize(n_tokens);
  for (int i = 0; i < n_tokens; ++i) s.tokens[i] = i % 16;
  s.segments = {{n_tokens * kFramesPerToken, a, v}};
  s.speaker_id = speaker;
  s.noise_std = 0.f;
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("synthdata");

TEST_CASE("codebook patterns are unit norm and deterministic") {
  Codebook a = test_codebook();
  Codebook b = test_codebook();
  CHECK(a.patterns == b.patterns);
  for (int v = 0; v < a.vocab(); ++v) {
    CHECK(std::abs(a.patterns.col(v).norm() - 1.f) < 1e-6f);
  }
  Codebook c = make_codebook(8, 16, 99);
  CHECK(a.patterns != c.patterns);
}

TEST_CASE("gen_utterance extreme emotions fill bands with 1 and 0") {
  Codebook cb = test_codebook();
  auto up = gen_utterance(single_segment_spec(1.f, 1.f), cb, 7, 8, kFramesPerToken, 0.f);
  const int F = 16;
  CHECK(up.features.block(arousal_row0(F), 0, 4, up.features.cols()).isApproxToConstant(1.f, 1e-7f));
  CHECK(up.features.block(valence_row0(F), 0, 4, up.features.cols()).isApproxToConstant(1.f, 1e-7f));

  auto down = gen_utterance(single_segment_spec(-1.f, -1.f), cb, 7, 8, kFramesPerToken, 0.f);
  CHECK(down.features.block(arousal_row0(F), 0, 8, down.features.cols()).cwiseAbs().maxCoeff() == 0.f);
}

TEST_CASE("gen_utterance is bit-deterministic for fixed seeds") {
  Codebook cb = test_codebook();
  UtteranceSpec s = single_segment_spec(0.4f, -0.2f, 6, 3);
  s.noise_std = 0.05f;
  auto a = gen_utterance(s, cb, 11, 22);
  auto b = gen_utterance(s, cb, 11, 22);
  CHECK(a.features == b.features);
  CHECK(a.emotion == b.emotion);
  auto c = gen_utterance(s, cb, 11, 23);
  CHECK(a.features != c.features);
}

TEST_CASE("gen_utterance rejects inconsistent segment lengths") {
  Codebook cb = test_codebook();
  UtteranceSpec s = single_segment_spec(0.f, 0.f);
  s.segments[0].length_frames += 1;
  CHECK_THROWS_AS(gen_utterance(s, cb, 1, 2), std::invalid_argument);
}

TEST_CASE("extract_emotion inverts the generator") {
  Codebook cb = test_codebook();
  SUBCASE("constant arousal 0.5 with speaker offset") {
    auto u = gen_utterance(single_segment_spec(0.5f, -0.25f, 8, 5), cb, 7, 8);
    EmotionTrack e = extract_emotion(u.features, 1);
    for (long t = 0; t < e.cols(); ++t) {
      CHECK(e(0, t) == doctest::Approx(0.5).epsilon(1e-6));
      CHECK(e(1, t) == doctest::Approx(-0.25).epsilon(1e-6));
    }
  }
  SUBCASE("all-zero features extract to -1") {
    FeatureMatrix z = FeatureMatrix::Zero(16, 12);
    EmotionTrack e = extract_emotion(z, 1);
    CHECK(e.minCoeff() == -1.f);
    CHECK(e.maxCoeff() == -1.f);
  }
  SUBCASE("arbitrary rendered track recovered exactly") {
    EmotionTrack track(2, 4);
    track << -1.f, -1.f, 1.f, 1.f, 0.5f, 0.f, -0.5f, 1.f;
    FeatureMatrix x = render({0}, track, cb);
    EmotionTrack rec = extract_emotion(x, 1);
    CHECK((rec - track).cwiseAbs().maxCoeff() < 1e-6f);
  }
}

TEST_CASE("window_interpolate") {
  SUBCASE("window 1 is the identity") {
    EmotionTrack t(2, 5);
    t << 0.1f, -0.3f, 0.7f, 0.f, 1.f, -1.f, 0.2f, 0.4f, -0.6f, 0.9f;
    CHECK(window_interpolate(t, 1) == t);
  }
  SUBCASE("documented sliding means") {
    EmotionTrack t(2, 4);
    t << 0, 0, 1, 1, 0, 0, 1, 1;
    EmotionTrack w = window_interpolate(t, 3);
    CHECK(w(0, 0) == doctest::Approx(0.0));
    CHECK(w(0, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(w(0, 2) == doctest::Approx(2.0 / 3.0));
    CHECK(w(0, 3) == doctest::Approx(1.0));
  }
  SUBCASE("constants are fixed points") {
    EmotionTrack t = EmotionTrack::Constant(2, 9, 0.37f);
    for (int w : {1, 2, 5, 17, 100}) {
      CHECK((window_interpolate(t, w) - t).cwiseAbs().maxCoeff() < 1e-6f);
    }
  }
  SUBCASE("window >= 2T-1 gives the global mean") {
    Rng rng(5);
    EmotionTrack t(2, 7);
    for (long c = 0; c < t.cols(); ++c) {
      t(0, c) = static_cast<float>(rng.uniform(-1, 1));
      t(1, c) = static_cast<float>(rng.uniform(-1, 1));
    }
    EmotionTrack w = window_interpolate(t, 13);
    for (int ch = 0; ch < 2; ++ch) {
      float mean = t.row(ch).mean();
      for (long c = 0; c < t.cols(); ++c) CHECK(w(ch, c) == doctest::Approx(mean).epsilon(1e-5));
    }
  }
  SUBCASE("linearity in the track argument") {
    Rng rng(6);
    for (int rep = 0; rep < 20; ++rep) {
      int T = 3 + rng.uniform_int(20);
      int w = 1 + rng.uniform_int(2 * T);
      EmotionTrack a(2, T), b(2, T);
      for (long c = 0; c < T; ++c) {
        for (int ch = 0; ch < 2; ++ch) {
          a(ch, c) = static_cast<float>(rng.uniform(-1, 1));
          b(ch, c) = static_cast<float>(rng.uniform(-1, 1));
        }
      }
      float alpha = static_cast<float>(rng.uniform(-2, 2));
      EmotionTrack lhs = window_interpolate(a * alpha + b, w);
      EmotionTrack rhs = window_interpolate(a, w) * alpha + window_interpolate(b, w);
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-5f);
    }
  }
}

TEST_CASE("extract_emotion clamps to the track range") {
  Rng rng(77);
  FeatureMatrix wild(16, 10);
  for (long c = 0; c < 10; ++c) {
    for (long f = 0; f < 16; ++f) wild(f, c) = static_cast<float>(rng.uniform(-6, 6));
  }
  for (int w : {1, 3, 9}) {
    EmotionTrack e = extract_emotion(wild, w);
    CHECK(e.minCoeff() >= -1.f);
    CHECK(e.maxCoeff() <= 1.f);
  }
}

TEST_CASE("decode_tokens") {
  Codebook cb = test_codebook();
  SUBCASE("noiseless round trip") {
    UtteranceSpec s = single_segment_spec(0.3f, 0.3f, 8, 4);
    for (size_t i = 0; i < s.tokens.size(); ++i) s.tokens[i] = static_cast<int>((i * 5 + 3) % 16);
    auto u = gen_utterance(s, cb, 7, 8);
    CHECK(decode_tokens(u.features, cb) == s.tokens);
  }
  SUBCASE("overwritten window changes exactly one token") {
    UtteranceSpec s = single_segment_spec(0.f, 0.f, 4, 1);
    s.tokens = {3, 5, 7, 9};
    auto u = gen_utterance(s, cb, 7, 8);
    for (int j = 0; j < kFramesPerToken; ++j) {
      u.features.col(kFramesPerToken + j).head(8) = cb.patterns.col(12);
    }
    std::vector<int> expect = {3, 12, 7, 9};
    CHECK(decode_tokens(u.features, cb) == expect);
  }
  SUBCASE("zero content band yields the reserved id") {
    FeatureMatrix z = FeatureMatrix::Zero(16, 8);
    std::vector<int> toks = decode_tokens(z, cb);
    for (int tok : toks) CHECK(tok == cb.reserved_token());
  }
  SUBCASE("frame count must divide by L") {
    FeatureMatrix z = FeatureMatrix::Zero(16, 7);
    CHECK_THROWS_AS(decode_tokens(z, cb), std::invalid_argument);
  }
}

TEST_CASE("estimate_speaker recovers the additive offset") {
  Codebook cb = test_codebook();
  SUBCASE("noiseless estimate equals the table offset") {
    auto u = gen_utterance(single_segment_spec(0.6f, -0.4f, 8, 3), cb, 42, 1);
    Vecf est = estimate_speaker(u.features, cb);
    Vecf truth = speaker_offset(16, 42, 3);
    CHECK((est - truth).norm() < 1e-6f);
  }
  SUBCASE("zero amplitude gives a near-zero estimate") {
    auto u = gen_utterance(single_segment_spec(0.2f, 0.2f), cb, 42, 1, kFramesPerToken, 0.f);
    CHECK(estimate_speaker(u.features, cb).norm() < 1e-6f);
  }
  SUBCASE("same speaker across different tokens agrees") {
    UtteranceSpec a = single_segment_spec(0.1f, 0.9f, 8, 7);
    UtteranceSpec b = single_segment_spec(-0.7f, 0.2f, 8, 7);
    for (size_t i = 0; i < b.tokens.size(); ++i) b.tokens[i] = static_cast<int>((i * 3 + 1) % 16);
    Vecf ea = estimate_speaker(gen_utterance(a, cb, 42, 1).features, cb);
    Vecf eb = estimate_speaker(gen_utterance(b, cb, 42, 2).features, cb);
    double cos = ea.cast<double>().dot(eb.cast<double>()) / (ea.norm() * eb.norm());
    CHECK(cos > 0.99);
  }
}

TEST_CASE("speaker offsets leave the oracle bands unbiased") {
  for (uint32_t id : {0u, 5u, 1000u}) {
    Vecf sigma = speaker_offset(16, 42, id);
    CHECK(std::abs(sigma.norm() - kSpeakerAmplitude) < 1e-6f);
    CHECK(std::abs(sigma.head(8).sum()) < 1e-6f);
    CHECK(std::abs(sigma.segment(8, 4).sum()) < 1e-6f);
    CHECK(std::abs(sigma.tail(4).sum()) < 1e-6f);
  }
}

TEST_CASE("build_emochange_case") {
  Codebook cb = test_codebook();
  UtteranceSpec a = single_segment_spec(1.f, 0.5f, 8, 2);
  UtteranceSpec b = single_segment_spec(-1.f, -0.5f, 8, 2);
  SUBCASE("track halves carry the two emotions") {
    EmoChangeCase c = build_emochange_case(a, b, cb, 42, 9, {1, 2, 3});
    const int Ta = 8 * kFramesPerToken;
    CHECK(c.ref_features.cols() == 2 * Ta);
    CHECK(c.ref_track(0, 0) == 1.f);
    CHECK(c.ref_track(0, Ta) == -1.f);
    CHECK(static_cast<int>(c.target_tokens.size()) * kFramesPerToken == 2 * Ta);
    CHECK(c.target_tokens[0] == 1);
    CHECK(c.target_tokens[3] == 1);
  }
  SUBCASE("identical halves give a constant track") {
    EmoChangeCase c = build_emochange_case(a, a, cb, 42, 9, {0});
    CHECK(c.ref_track.row(0).minCoeff() == c.ref_track.row(0).maxCoeff());
  }
  SUBCASE("speaker mismatch is rejected") {
    UtteranceSpec other = b;
    other.speaker_id = a.speaker_id + 1;
    CHECK_THROWS_AS(build_emochange_case(a, other, cb, 42, 9, {0}), std::invalid_argument);
  }
}

TEST_CASE("corpus specs satisfy the domain invariants") {
  CorpusParams p;
  p.count = 50;
  auto specs = make_corpus_specs(p, 31);
  REQUIRE(specs.size() == 50);
  for (const auto& s : specs) {
    int total = 0;
    for (const auto& seg : s.segments) {
      CHECK(seg.length_frames >= p.min_segment_frames);
      CHECK(std::abs(seg.arousal) <= 1.f);
      CHECK(std::abs(seg.valence) <= 1.f);
      total += seg.length_frames;
    }
    CHECK(total == static_cast<int>(s.tokens.size()) * p.frames_per_token);
    CHECK(static_cast<int>(s.tokens.size()) >= p.min_tokens);
    CHECK(static_cast<int>(s.tokens.size()) <= p.max_tokens);
  }
  auto again = make_corpus_specs(p, 31);
  CHECK(again[7].tokens == specs[7].tokens);
}

TEST_SUITE_END();
