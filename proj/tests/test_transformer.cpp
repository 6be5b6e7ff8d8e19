#include <gtest/gtest.h>

#include <cmath>

#include "docnmt/batching.hpp"
#include "docnmt/gradcheck.hpp"
#include "docnmt/model.hpp"
#include "docnmt/transformer.hpp"
#include "docnmt/vocab.hpp"
#include "test_util.hpp"

using namespace docnmt;
using docnmt::testing::kind_of;
using docnmt::testing::probe;
using docnmt::testing::random_tensor;

namespace {

ModelConfig small_config(std::size_t d = 16, std::size_t heads = 2) {
  ModelConfig c;
  c.d_model = d;
  c.n_heads = heads;
  c.n_layers = 2;
  c.d_ff = 2 * d;
  c.dropout = 0.1;
  c.max_len = 32;
  c.src_vocab = 11;
  c.tgt_vocab = 9;
  return c;
}

Batch two_row_batch() {
  Document doc{"d", {}};
  doc.pairs.push_back({0, {4, 5, 6, 7}, {4, 5, 6}});
  doc.pairs.push_back({1, {8, 9}, {7, 8, 5, 4, 6}});
  return make_batch(doc, 0, 0, 2);
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Row-vector [n x d] times [d x m] plus bias, written out with loops.
std::vector<double> affine(const std::vector<double>& x, std::size_t n, std::size_t d,
                           const Tensor& w, const Tensor& b) {
  const std::size_t m = w.dim(1);
  std::vector<double> y(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = b[j];
      for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * w[k * m + j];
      y[i * m + j] = s;
    }
  }
  return y;
}

// Independent scalar implementation of masked multi-head attention for one
// batch row.
std::vector<double> reference_attention(const AttentionWeights& w, const std::vector<double>& q_in,
                                        const std::vector<double>& kv_in, std::size_t nq,
                                        std::size_t nk, std::size_t d, std::size_t heads,
                                        const std::vector<bool>& key_allowed) {
  const auto q = affine(q_in, nq, d, w.wq, w.bq);
  const auto k = affine(kv_in, nk, d, w.wk, w.bk);
  const auto v = affine(kv_in, nk, d, w.wv, w.bv);
  const std::size_t dk = d / heads;
  std::vector<double> ctx(nq * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> s(nk, -INFINITY);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!key_allowed[j]) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) dot += q[i * d + h * dk + c] * k[j * d + h * dk + c];
        s[j] = dot / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < nk; ++j) {
        for (std::size_t c = 0; c < dk; ++c) ctx[i * d + h * dk + c] += s[j] / z * v[j * d + h * dk + c];
      }
    }
  }
  return affine(ctx, nq, d, w.wo, w.bo);
}

}  // namespace

TEST(Attention, ZeroQueriesAverageProjectedValues) {
  const std::size_t d = 4;
  Rng rng(41);
  ModelParams params;
  auto w = AttentionWeights::create(params, "a", d, rng);
  std::fill(w.wq.mutable_data().begin(), w.wq.mutable_data().end(), 0.0);
  const auto x = random_tensor({1, 3, d}, rng, -1, 1, false);
  const std::vector<std::size_t> lengths{3};
  const auto out = multi_head_attention(w, x, x, x, AttentionMask::padding(lengths, 3, 3), 1).output;

  const auto v = affine(values(x), 3, d, w.wv, w.bv);
  std::vector<double> mean(d, 0.0);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += v[j * d + c] / 3.0;
  }
  const auto expected = affine(mean, 1, d, w.wo, w.bo);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out[i * d + c], expected[c], 1e-12);
  }
}

TEST(Attention, SingleUnmaskedKeyCopiesItsValue) {
  const std::size_t d = 6;
  Rng rng(42);
  ModelParams params;
  const auto w = AttentionWeights::create(params, "a", d, rng);
  const auto x = random_tensor({1, 4, d}, rng, -1, 1, false);
  const std::vector<std::size_t> lengths{1};
  const auto out = multi_head_attention(w, x, x, x, AttentionMask::padding(lengths, 4, 4), 2).output;
  const auto v = affine(values(x), 4, d, w.wv, w.bv);
  const auto expected = affine(std::vector<double>(v.begin(), v.begin() + d), 1, d, w.wo, w.bo);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out[i * d + c], expected[c], 1e-12);
  }
}

TEST(Attention, WeightRowsSumToOne) {
  const std::size_t d = 8;
  Rng rng(43);
  ModelParams params;
  const auto w = AttentionWeights::create(params, "a", d, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_tensor({2, 5, d}, rng, -3, 3, false);
    const std::vector<std::size_t> lengths{5, 1 + rng.below(5)};
    const auto r = multi_head_attention(w, x, x, x, AttentionMask::padding(lengths, 5, 5), 2);
    const auto& wt = r.weights;
    for (std::size_t row = 0; row < 2 * 2 * 5; ++row) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        const double a = wt[row * 5 + k];
        if (k >= lengths[row / 10]) EXPECT_EQ(a, 0.0);
        s += a;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Attention, MatchesScalarReference) {
  const std::size_t d = 8, heads = 4;
  Rng rng(44);
  ModelParams params;
  const auto w = AttentionWeights::create(params, "a", d, rng);
  const auto q = random_tensor({2, 3, d}, rng, -1, 1, false);
  const auto kv = random_tensor({2, 5, d}, rng, -1, 1, false);
  const std::vector<std::size_t> lengths{5, 2};
  const auto out = multi_head_attention(w, q, kv, kv, AttentionMask::padding(lengths, 3, 5), heads).output;
  for (std::size_t b = 0; b < 2; ++b) {
    const std::vector<double> qb(q.data().begin() + b * 3 * d, q.data().begin() + (b + 1) * 3 * d);
    const std::vector<double> kb(kv.data().begin() + b * 5 * d, kv.data().begin() + (b + 1) * 5 * d);
    std::vector<bool> allowed(5);
    for (std::size_t j = 0; j < 5; ++j) allowed[j] = j < lengths[b];
    const auto ref = reference_attention(w, qb, kb, 3, 5, d, heads, allowed);
    for (std::size_t i = 0; i < 3 * d; ++i) EXPECT_NEAR(out[b * 3 * d + i], ref[i], 1e-12);
  }
}

TEST(Attention, IndivisibleHeadsIsConfigError) {
  Rng rng(45);
  ModelParams params;
  const auto w = AttentionWeights::create(params, "a", 6, rng);
  const auto x = random_tensor({1, 2, 6}, rng, -1, 1, false);
  const std::vector<std::size_t> lengths{2};
  EXPECT_EQ(kind_of([&] { multi_head_attention(w, x, x, x, AttentionMask::padding(lengths, 2, 2), 4); }),
            ErrorKind::kConfig);
  auto c = small_config(10, 4);
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfig);
}

TEST(PositionalEncoding, Values) {
  const auto pe = positional_encoding(50, 16);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(pe[i], i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NEAR(pe[16], 0.8414709848, 1e-10);
  EXPECT_NEAR(pe[16 + 1], std::cos(1.0), 1e-15);
  EXPECT_NEAR(pe[3 * 16 + 4], std::sin(3.0 / std::pow(10000.0, 4.0 / 16.0)), 1e-15);
}

TEST(PositionalEncoding, RowNormIsHalfDimension) {
  for (std::size_t d : {4u, 16u, 64u}) {
    const auto pe = positional_encoding(200, d);
    for (std::size_t pos = 0; pos < 200; ++pos) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += pe[pos * d + i] * pe[pos * d + i];
      EXPECT_NEAR(s, d / 2.0, 1e-9);
    }
  }
}

TEST(Compose, NoSlotsIsScaledTokensPlusPositions) {
  const auto config = small_config();
  NmtModel model(config, 3);
  const auto& t = model.transformer();
  const std::vector<int> ids{4, 5, 6, 0};
  const std::vector<std::size_t> lengths{3};
  const auto tokens = t.embed_source(ids, 1, 4);
  const auto composed = t.compose_source_sequence(tokens, lengths, std::nullopt, std::nullopt);
  EXPECT_EQ(composed.slot_count(), 0u);
  EXPECT_EQ(composed.width(), 4u);
  EXPECT_EQ(composed.lengths, lengths);
  const auto pe = positional_encoding(4, 16);
  for (std::size_t i = 0; i < 4 * 16; ++i) {
    EXPECT_EQ(composed.embeddings[i], tokens[i] * 4.0 + pe[i]);
  }
}

TEST(Compose, BothSlotsPrependGlobalThenLocal) {
  auto config = small_config();
  NmtModel model(config, 3);
  const auto& t = model.transformer();
  const std::vector<int> ids{4, 5, 6, 7, 8, 0};
  const std::vector<std::size_t> lengths{3, 2};
  const auto tokens = t.embed_source(ids, 2, 3);
  Rng rng(46);
  const auto g = random_tensor({16}, rng, -1, 1, false);
  const auto l = random_tensor({16}, rng, -1, 1, false);
  const auto composed = t.compose_source_sequence(tokens, lengths, g, l);
  EXPECT_EQ(composed.width(), 5u);
  EXPECT_EQ(composed.slots, (std::vector<SlotKind>{SlotKind::kGlobal, SlotKind::kLocal}));
  EXPECT_EQ(composed.lengths, (std::vector<std::size_t>{5, 4}));
  const auto pe = positional_encoding(5, 16);
  for (std::size_t row = 0; row < 2; ++row) {
    EXPECT_FALSE(composed.is_padding(row, 0));
    EXPECT_FALSE(composed.is_padding(row, 1));
    for (std::size_t c = 0; c < 16; ++c) {
      EXPECT_EQ(composed.embeddings[(row * 5 + 0) * 16 + c], g[c] + pe[c]);
      EXPECT_EQ(composed.embeddings[(row * 5 + 1) * 16 + c], l[c] + pe[16 + c]);
      EXPECT_EQ(composed.embeddings[(row * 5 + 2) * 16 + c], tokens[(row * 3) * 16 + c] * 4.0 + pe[32 + c]);
    }
  }
  EXPECT_TRUE(composed.is_padding(1, 4));
}

TEST(Compose, SlotScalingFlag) {
  auto config = small_config();
  config.scale_doc_slots = true;
  NmtModel model(config, 3);
  const std::vector<int> ids{4};
  const std::vector<std::size_t> lengths{1};
  Rng rng(47);
  const auto g = random_tensor({16}, rng, -1, 1, false);
  const auto composed =
      model.transformer().compose_source_sequence(model.transformer().embed_source(ids, 1, 1), lengths, g,
                                                  std::nullopt);
  EXPECT_EQ(composed.slots, (std::vector<SlotKind>{SlotKind::kGlobal}));
  for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(composed.embeddings[c], g[c] * 4.0 + (c % 2 ? 1.0 : 0.0));
}

TEST(Compose, WrongSlotDimensionIsConfigError) {
  NmtModel model(small_config(), 3);
  const std::vector<int> ids{4};
  const std::vector<std::size_t> lengths{1};
  const auto tokens = model.transformer().embed_source(ids, 1, 1);
  EXPECT_EQ(kind_of([&] {
              model.transformer().compose_source_sequence(tokens, lengths, Tensor::zeros({8}), std::nullopt);
            }),
            ErrorKind::kConfig);
}

TEST(Compose, DocumentOffIsByteEquivalentToBaseline) {
  auto base_config = small_config();
  base_config.zero_init_output = false;
  auto doc_config = base_config;
  doc_config.use_global = true;
  doc_config.local_methods = {DocMethod::kRnn, DocMethod::kAttn};
  NmtModel baseline(base_config, 9);
  NmtModel enhanced(doc_config, 9);
  for (const auto& [name, value] : baseline.params().entries()) {
    EXPECT_EQ(values(value), values(enhanced.params().at(name))) << name;
  }
  const auto batch = two_row_batch();
  const auto a = baseline.logits(batch, {});
  const auto b = enhanced.logits(batch, {});
  EXPECT_EQ(values(a), values(b));
  // Zero vectors in the slots are not the same computation.
  DocSlots zeros{Tensor::zeros({16}), Tensor::zeros({16})};
  EXPECT_NE(values(enhanced.logits(batch, zeros)), values(a));
}

TEST(Decoder, CausalPrefixDoesNotSeeFuture) {
  auto config = small_config();
  config.zero_init_output = false;
  NmtModel model(config, 5);
  const auto batch = two_row_batch();
  const auto base = model.logits(batch, {});
  const std::size_t v = config.tgt_vocab, w = batch.tgt_width;
  for (std::size_t j = 1; j < batch.tgt_lengths[1]; ++j) {
    auto changed = batch;
    changed.tgt_in[w + j] = changed.tgt_in[w + j] == 4 ? 5 : 4;
    const auto out = model.logits(changed, {});
    for (std::size_t pos = 0; pos < w; ++pos) {
      bool differs = false;
      for (std::size_t k = 0; k < v; ++k) differs |= out[(w + pos) * v + k] != base[(w + pos) * v + k];
      if (pos < j) {
        EXPECT_FALSE(differs) << "position " << pos << " saw token " << j;
      } else if (pos < batch.tgt_lengths[1]) {
        EXPECT_TRUE(differs) << "position " << pos << " ignored token " << j;
      }
      // The other row is untouched.
      for (std::size_t k = 0; k < v; ++k) EXPECT_EQ(out[pos * v + k], base[pos * v + k]);
    }
  }
}

TEST(Decoder, SourcePaddingIsInvisible) {
  auto config = small_config();
  config.zero_init_output = false;
  NmtModel model(config, 6);
  const auto batch = two_row_batch();
  const auto base = model.logits(batch, {});
  ASSERT_EQ(batch.src[batch.src_width + 4], Vocabulary::kPad);
  for (int replacement : {5, 9, 10}) {
    auto changed = batch;
    changed.src[batch.src_width + 3] = replacement;
    changed.src[batch.src_width + 4] = replacement;
    const auto out = model.logits(changed, {});
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_LT(std::abs(out[i] - base[i]), 1e-10 * std::max(1.0, std::abs(base[i])));
    }
  }
  // A real token change does reach the logits.
  auto changed = batch;
  changed.src[batch.src_width] = 10;
  EXPECT_NE(values(model.logits(changed, {})), values(base));
}

TEST(Decoder, PrefixBeyondMaxLenIsDimensionError) {
  auto config = small_config();
  config.max_len = 4;
  NmtModel model(config, 7);
  Document doc{"d", {}};
  doc.pairs.push_back({0, {4, 5}, {4, 5, 6, 7, 8}});
  const auto batch = make_batch(doc, 0, 0, 1);
  EXPECT_EQ(kind_of([&] { model.logits(batch, {}); }), ErrorKind::kDimension);
}

TEST(Model, InitialLossIsLogVocabulary) {
  const auto config = small_config();
  NmtModel model(config, 8);
  const auto batch = two_row_batch();
  const auto logits = model.logits(batch, {});
  for (double x : logits.data()) EXPECT_TRUE(std::isfinite(x));
  // Zero-initialized output layer: every distribution is uniform, and the
  // smoothed cross-entropy against a uniform prediction is ln V.
  EXPECT_NEAR(model.loss(batch, nullptr).item(), std::log(9.0), 1e-12);
  EXPECT_NEAR(model.loss(batch, nullptr, nullptr, 0.0).item(), std::log(9.0), 1e-12);
}

TEST(Model, UntiedXavierOutputStartsNearLogVocabulary) {
  auto config = small_config();
  config.zero_init_output = false;
  NmtModel model(config, 8);
  const double loss = model.loss(two_row_batch(), nullptr).item();
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, std::log(9.0), 0.5 * std::log(9.0));
}

TEST(Model, DropoutOnlyInTraining) {
  const auto config = small_config();
  NmtModel model(config, 8);
  const auto batch = two_row_batch();
  EXPECT_EQ(values(model.logits(batch, {})), values(model.logits(batch, {})));
  auto c2 = config;
  c2.zero_init_output = false;
  NmtModel m2(c2, 8);
  Rng r1(1), r2(2);
  EXPECT_NE(values(m2.logits(batch, {}, &r1)), values(m2.logits(batch, {}, &r2)));
}

TEST(Model, FullGradientMatchesFiniteDifferences) {
  auto config = small_config(16, 2);
  config.zero_init_output = false;
  NmtModel model(config, 10);
  const auto batch = two_row_batch();
  const auto f = [&] { return model.loss(batch, nullptr); };
  for (const auto& name :
       {"src_embed", "tgt_embed", "enc.0.self_attn.wq", "enc.1.self_attn.bv", "enc.0.ffn.w1", "enc.1.norm2.gain",
        "dec.0.self_attn.wk", "dec.1.cross_attn.wv", "dec.0.cross_attn.wq", "dec.1.ffn.w2", "dec.0.norm3.bias",
        "out.w", "out.b"}) {
    Tensor& leaf = model.params().at(name);
    EXPECT_LT(finite_diff_check(std::function<Tensor()>(f), leaf), 1e-4) << name;
  }
}

TEST(Model, TiedOutputUsesTargetTable) {
  auto config = small_config();
  config.tie_output = true;
  NmtModel model(config, 11);
  EXPECT_FALSE(model.params().contains("out.w"));
  const auto batch = two_row_batch();
  const auto f = [&] { return model.loss(batch, nullptr); };
  EXPECT_LT(finite_diff_check(std::function<Tensor()>(f), model.params().at("tgt_embed")), 1e-4);
}
