#include "flowctl/model.hpp"

#include "flowctl/flow.hpp"

#include <doctest.h>

using namespace flowctl;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.F = 8;
  c.D = 16;
  c.B = 3;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.V = 6;
  c.L = 4;
  c.max_T = 64;
  return c;
}

struct Inputs {
  Matf x_t, masked;
  std::vector<int> tokens;
};

Inputs random_inputs(const ModelConfig& c, int T, uint64_t seed) {
  Rng rng(seed);
  Inputs in;
  in.x_t = gaussian_matrix(c.F, T, rng);
  in.masked = gaussian_matrix(c.F, T, rng);
  in.tokens.resize(T / c.L);
  for (auto& tok : in.tokens) tok = rng.uniform_int(c.V);
  return in;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("init_base is deterministic and seed-sensitive") {
  ModelConfig c = tiny_config();
  BaseParams a = init_base(c, 5);
  BaseParams b = init_base(c, 5);
  CHECK(hash_views(tensor_views(a)) == hash_views(tensor_views(b)));
  BaseParams d = init_base(c, 6);
  CHECK(hash_views(tensor_views(a)) != hash_views(tensor_views(d)));
  for (const auto& blk : a.blocks) {
    CHECK(blk.mod.w.cwiseAbs().maxCoeff() == 0.f);
    CHECK(blk.qkv.b.cwiseAbs().maxCoeff() == 0.f);
  }
}

TEST_CASE("assemble_input") {
  ModelConfig c = tiny_config();
  BaseParams p = init_base(c, 7);
  const int T = 16;
  Inputs in = random_inputs(c, T, 1);

  SUBCASE("zero inputs and zero projection give a zero hidden sequence") {
    p.input_proj.w.setZero();
    p.input_proj.b.setZero();
    Matf zero = Matf::Zero(c.F, T);
    Matf h = assemble_input<float>(zero, zero, {}, p);
    CHECK(h.cwiseAbs().maxCoeff() == 0.f);
  }
  SUBCASE("assembly is frame-local") {
    Matf h0 = assemble_input(in.x_t, in.masked, in.tokens, p);
    Matf x2 = in.x_t;
    x2(3, 5) += 1.f;
    Matf h1 = assemble_input(x2, in.masked, in.tokens, p);
    for (int t = 0; t < T; ++t) {
      if (t == 5) {
        CHECK((h0.row(t) - h1.row(t)).cwiseAbs().maxCoeff() > 0.f);
      } else {
        CHECK(h0.row(t) == h1.row(t));
      }
    }
  }
  SUBCASE("identity projection reproduces the concatenation") {
    ModelConfig ci = c;
    ci.D = 3 * ci.F;
    BaseParams pi = init_base(ci, 7);
    pi.input_proj.w.setIdentity();
    pi.input_proj.b.setZero();
    Matf h = assemble_input(in.x_t, in.masked, in.tokens, pi);
    for (int t = 0; t < T; ++t) {
      CHECK(h.row(t).segment(0, ci.F) == in.x_t.col(t).transpose());
      CHECK(h.row(t).segment(ci.F, ci.F) == in.masked.col(t).transpose());
      CHECK(h.row(t).segment(2 * ci.F, ci.F) == pi.tok_emb.row(in.tokens[t / ci.L]));
    }
  }
  SUBCASE("short token sequences are padded with the filler id") {
    std::vector<int> frame_tokens;
    assemble_rows(in.x_t, in.masked, {2}, p, &frame_tokens);
    CHECK(frame_tokens[0] == 2);
    CHECK(frame_tokens[c.L] == c.filler_token());
    CHECK(frame_tokens[T - 1] == c.filler_token());
  }
  SUBCASE("overlong token sequences are rejected") {
    std::vector<int> too_many(T / c.L + 1, 0);
    CHECK_THROWS_AS(assemble_input(in.x_t, in.masked, too_many, p), std::invalid_argument);
  }
}

TEST_CASE("forward_base") {
  ModelConfig c = tiny_config();
  BaseParams p = init_base(c, 8);
  const int T = 16;
  Inputs in = random_inputs(c, T, 2);

  SUBCASE("zero hidden maps to the zero field at init") {
    BaseTape<float> tape;
    Matf zero_hidden = Matf::Zero(T, c.D);
    std::vector<int> all{0, 1, 2};
    forward_from_hidden<float>(zero_hidden, 0.5, p, all, nullptr, tape);
    CHECK(tape.field.cwiseAbs().maxCoeff() == 0.f);
  }
  SUBCASE("deterministic forward") {
    BaseTape<float> t1, t2;
    forward_base(in.x_t, in.masked, in.tokens, 0.3, p, {}, t1);
    forward_base(in.x_t, in.masked, in.tokens, 0.3, p, {}, t2);
    CHECK(t1.field == t2.field);
  }
  SUBCASE("skipping every block leaves only the head on the input") {
    BaseTape<float> tape;
    forward_base(in.x_t, in.masked, in.tokens, 0.1, p, {0, 1, 2}, tape);
    Matf h0 = assemble_input(in.x_t, in.masked, in.tokens, p);
    ColVec<float> inv_sigma;
    Matf nhat = layer_norm_forward(h0, inv_sigma);
    Matf expect = linear_forward(nhat, p.out_head).transpose();
    CHECK(tape.field == expect);
  }
  SUBCASE("a skipped block is the identity on the residual stream") {
    BaseTape<float> tape;
    forward_base(in.x_t, in.masked, in.tokens, 0.7, p, {1}, tape);
    Matf h0 = assemble_input(in.x_t, in.masked, in.tokens, p);
    CHECK(tape.block_outputs[1] == tape.block_outputs[0]);
    CHECK(tape.block_outputs[0] != h0);
  }
  SUBCASE("zero injections are bit-identical to no injections") {
    BaseTape<float> plain, injected;
    forward_base(in.x_t, in.masked, in.tokens, 0.4, p, {}, plain);
    std::vector<Matf> inj(c.B);
    inj[0] = Matf::Zero(T, c.D);
    inj[2] = Matf::Zero(T, c.D);
    forward_base(in.x_t, in.masked, in.tokens, 0.4, p, {}, injected, &inj);
    CHECK(plain.field == injected.field);
  }
  SUBCASE("out-of-range skip index is rejected") {
    BaseTape<float> tape;
    CHECK_THROWS_AS(forward_base(in.x_t, in.masked, in.tokens, 0.4, p, {c.B}, tape),
                    std::invalid_argument);
  }
  SUBCASE("frame counts above max_T are rejected") {
    Inputs big = random_inputs(c, c.max_T + c.L, 3);
    BaseTape<float> tape;
    CHECK_THROWS_AS(forward_base(big.x_t, big.masked, big.tokens, 0.4, p, {}, tape),
                    std::invalid_argument);
  }
}

TEST_CASE("injections reach the field and gradients flow back to them") {
  ModelConfig c = tiny_config();
  BaseParams p = init_base(c, 9);
  const int T = 8;
  Inputs in = random_inputs(c, T, 4);
  Rng rng(10);

  std::vector<Matf> inj(c.B);
  inj[1] = gaussian_matrix(T, c.D, rng);
  BaseTape<float> plain, injected;
  forward_base(in.x_t, in.masked, in.tokens, 0.2, p, {}, plain);
  forward_base(in.x_t, in.masked, in.tokens, 0.2, p, {}, injected, &inj);
  CHECK((plain.field - injected.field).cwiseAbs().maxCoeff() > 0.f);

  Matf dfield = Matf::Ones(c.F, T);
  std::vector<Matf> dinj;
  backward_base<float>(injected, dfield, p, nullptr, &dinj);
  REQUIRE(dinj.size() == static_cast<size_t>(c.B));
  CHECK(dinj[1].size() > 0);
  CHECK(dinj[1].cwiseAbs().maxCoeff() > 0.f);
  CHECK(dinj[0].size() == 0);
}

TEST_CASE("time conditioning changes the field") {
  ModelConfig c = tiny_config();
  BaseParams p = init_base(c, 11);
  // Give the zero-initialized modulations something to do.
  Rng rng(12);
  for (auto& blk : p.blocks) {
    for (long i = 0; i < blk.mod.w.rows(); ++i) {
      for (long j = 0; j < blk.mod.w.cols(); ++j) {
        blk.mod.w(i, j) = 0.02f * static_cast<float>(rng.normal());
      }
    }
  }
  Inputs in = random_inputs(c, 16, 5);
  BaseTape<float> a, b;
  forward_base(in.x_t, in.masked, in.tokens, 0.1, p, {}, a);
  forward_base(in.x_t, in.masked, in.tokens, 0.9, p, {}, b);
  CHECK((a.field - b.field).cwiseAbs().maxCoeff() > 1e-6f);
}

TEST_SUITE_END();
