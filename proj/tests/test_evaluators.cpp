#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "cocktail/toy_transformer.hpp"
#include "oracle_transformer.hpp"
#include "temp_dir.hpp"
#include "toy_fixtures.hpp"

using namespace cocktail;
using fixtures::passthrough_checkpoint;
using fixtures::toy_checkpoint;
using fixtures::zero_head_checkpoint;

namespace {

ToyArchConfig small_decoder() {
  ToyArchConfig cfg;
  cfg.vocab_size = 11;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 12;
  cfg.max_seq_len = 16;
  cfg.kind = ExampleKind::Decoder;
  return cfg;
}

ToyArchConfig small_encoder() {
  ToyArchConfig cfg = small_decoder();
  cfg.kind = ExampleKind::Encoder;
  return cfg;
}

TokenizedExample dec_example(std::vector<int> input, std::vector<int> target) {
  TokenizedExample e;
  e.kind = ExampleKind::Decoder;
  e.input_ids = std::move(input);
  e.target_ids = std::move(target);
  return e;
}

TokenizedExample enc_example(std::vector<int> query, std::vector<std::vector<int>> pos,
                             std::vector<std::vector<int>> neg) {
  TokenizedExample e;
  e.kind = ExampleKind::Encoder;
  e.query_ids = std::move(query);
  e.positive_ids = std::move(pos);
  e.negative_ids = std::move(neg);
  return e;
}

}  // namespace

TEST_CASE("a zeroed output head yields loss = ln(vocab) on any example") {
  const ToyArchConfig cfg = small_decoder();
  const TensorMap map = zero_head_checkpoint(cfg, 42);
  const CandidateLosses entry =
      decoder_loss(map, cfg, {dec_example({1, 2, 3}, {4, 5}), dec_example({9}, {10, 0, 7})});
  for (double l : entry.losses) {
    CHECK(std::abs(l - std::log(static_cast<double>(cfg.vocab_size))) < 1e-5);
  }
}

TEST_CASE("hand-set model with a ln 9 logit margin scores -ln 0.9") {
  // vocab 2, pass-through blocks: hidden state is ln_f(tok_emb[token]).
  // Rows are zero-mean unit-variance, so ln_f maps them (almost) onto
  // themselves; head column 1 = ln 9 * z with z picked so both rows dot to 1.
  ToyArchConfig cfg;
  cfg.vocab_size = 2;
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.d_ff = 4;
  cfg.max_seq_len = 8;
  cfg.kind = ExampleKind::Decoder;

  const double ln9 = std::log(9.0);
  const std::vector<std::vector<double>> rows = {{1, -1, 1, -1}, {1, 1, -1, -1}};
  const std::vector<double> z = {0.5, 0, 0, -0.5};
  // head.w is [d_model, vocab]: column 0 zero, column 1 = ln9 * z
  std::vector<double> head_w(4 * 2, 0.0);
  for (int i = 0; i < 4; ++i) head_w[i * 2 + 1] = ln9 * z[i];
  const TensorMap map = passthrough_checkpoint(cfg, rows, head_w, {0.0, 0.0});

  const std::vector<int> ids = {0, 1, 1, 1};
  // the gold token is 1 at every target position; confirm the margin with
  // the independent oracle before asserting the loss
  const oracle::Matrix logits = oracle::decoder_logits(map, cfg, ids);
  for (std::size_t t = 0; t < ids.size() - 1; ++t) {
    CHECK(std::abs((logits[t][1] - logits[t][0]) - ln9) < 1e-4);
  }

  const CandidateLosses entry = decoder_loss(map, cfg, {dec_example({0}, {1, 1, 1})});
  CHECK(std::abs(entry.aggregate - (-std::log(0.9))) < 1e-4);
}

TEST_CASE("duplicating an example leaves the aggregate unchanged") {
  const ToyArchConfig cfg = small_decoder();
  const TensorMap map = toy_checkpoint(cfg, 3);
  const TokenizedExample e = dec_example({1, 2}, {3, 4, 5});
  const double once = decoder_loss(map, cfg, {e}).aggregate;
  const double twice = decoder_loss(map, cfg, {e, e}).aggregate;
  CHECK(std::abs(once - twice) < 1e-12);
}

TEST_CASE("decoder loss matches the dense-arithmetic oracle on a 2-layer d=8 model") {
  const ToyArchConfig cfg = small_decoder();
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const TensorMap map = toy_checkpoint(cfg, seed);
    const std::vector<int> input = {1, 7, 2};
    const std::vector<int> target = {5, 0, 9, 3};
    const double expect = oracle::decoder_loss(map, cfg, input, target);
    const double got = decoder_loss(map, cfg, {dec_example(input, target)}).aggregate;
    CHECK(std::abs(got - expect) < 1e-5);

    // logits agree position by position as well
    std::vector<int> ids = input;
    ids.insert(ids.end(), target.begin(), target.end());
    const auto lib_logits = decoder_logits(map, cfg, ids);
    const auto ref_logits = oracle::decoder_logits(map, cfg, ids);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      for (std::size_t j = 0; j < lib_logits[t].size(); ++j) {
        CHECK(std::abs(lib_logits[t][j] - ref_logits[t][j]) < 1e-5);
      }
    }
  }
}

TEST_CASE("encoder embedding and loss match the oracle") {
  const ToyArchConfig cfg = small_encoder();
  for (std::uint64_t seed : {4ull, 5ull}) {
    const TensorMap map = toy_checkpoint(cfg, seed);
    const std::vector<int> q = {1, 2, 3};
    const std::vector<int> p = {4, 5};
    const std::vector<std::vector<int>> negs = {{6}, {7, 8, 9}};

    const std::vector<double> lib_emb = encoder_embedding(map, cfg, q);
    const std::vector<double> ref_emb = oracle::encoder_embedding(map, cfg, q);
    for (std::size_t i = 0; i < lib_emb.size(); ++i) {
      CHECK(std::abs(lib_emb[i] - ref_emb[i]) < 1e-5);
    }

    const double expect = oracle::encoder_loss(map, cfg, q, p, negs);
    const double got = encoder_loss(map, cfg, {enc_example(q, {p}, negs)}).aggregate;
    CHECK(std::abs(got - expect) < 1e-5);
  }
}

TEST_CASE("one positive and no negatives scores exactly zero") {
  const ToyArchConfig cfg = small_encoder();
  const TensorMap map = toy_checkpoint(cfg, 6);
  const CandidateLosses entry = encoder_loss(map, cfg, {enc_example({1, 2}, {{3, 4}}, {})});
  CHECK(entry.aggregate == 0.0);
}

TEST_CASE("query equal to positive with an orthogonal negative scores ~0") {
  ToyArchConfig cfg;
  cfg.vocab_size = 2;
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.d_ff = 4;
  cfg.max_seq_len = 4;
  cfg.kind = ExampleKind::Encoder;
  // rows are orthogonal and stay orthogonal through layer norm
  const TensorMap map = passthrough_checkpoint(cfg, {{1, -1, 1, -1}, {1, 1, -1, -1}});

  const double cos_qp = [&] {
    const auto a = encoder_embedding(map, cfg, {0});
    const auto b = encoder_embedding(map, cfg, {0});
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot;
  }();
  CHECK(std::abs(cos_qp - 1.0) < 1e-12);

  const CandidateLosses entry = encoder_loss(map, cfg, {enc_example({0}, {{0}}, {{1}})});
  // -log(e^50 / (e^50 + 1)) = log(1 + e^-50)
  CHECK(entry.aggregate >= 0.0);
  CHECK(entry.aggregate < 1e-12);
}

TEST_CASE("a model that embeds every text identically scores ln(k + 1)") {
  ToyArchConfig cfg;
  cfg.vocab_size = 6;
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.d_ff = 4;
  cfg.max_seq_len = 8;
  cfg.kind = ExampleKind::Encoder;
  // every token row identical -> every embedding identical (cos = 1 for all)
  const std::vector<double> row = {1, -1, 1, -1};
  const TensorMap map = passthrough_checkpoint(cfg, {row, row, row, row, row, row});

  for (int k : {1, 3, 5}) {
    std::vector<std::vector<int>> negs;
    for (int i = 0; i < k; ++i) negs.push_back({i % 6, (i + 1) % 6});
    const CandidateLosses entry =
        encoder_loss(map, cfg, {enc_example({0, 1}, {{2, 3}}, negs)});
    CHECK(std::abs(entry.aggregate - std::log(static_cast<double>(k + 1))) < 1e-5);
  }
}

TEST_CASE("losses are deterministic and batch-size independent") {
  const ToyArchConfig cfg = small_decoder();
  const TensorMap map = toy_checkpoint(cfg, 8);
  const TokenizedExample a = dec_example({1}, {2, 3});
  const TokenizedExample b = dec_example({4, 5, 6}, {7});

  const CandidateLosses both = decoder_loss(map, cfg, {a, b});
  const CandidateLosses again = decoder_loss(map, cfg, {a, b});
  CHECK(both.losses == again.losses);

  const CandidateLosses only_a = decoder_loss(map, cfg, {a});
  const CandidateLosses only_b = decoder_loss(map, cfg, {b});
  CHECK(std::abs(both.losses[0] - only_a.losses[0]) < 1e-6);
  CHECK(std::abs(both.losses[1] - only_b.losses[0]) < 1e-6);
}

TEST_CASE("losses are never negative") {
  const ToyArchConfig dec = small_decoder();
  const ToyArchConfig enc = small_encoder();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TensorMap dmap = toy_checkpoint(dec, seed);
    const TensorMap emap = toy_checkpoint(enc, seed + 100);
    for (double l : decoder_loss(dmap, dec, {dec_example({1, 2}, {3, 4})}).losses) {
      CHECK(l >= 0.0);
    }
    for (double l :
         encoder_loss(emap, enc, {enc_example({1}, {{2}}, {{3}, {4, 5}})}).losses) {
      CHECK(l >= 0.0);
    }
  }
}

TEST_CASE("weight/config mismatches are rejected") {
  const ToyArchConfig cfg = small_decoder();
  const TensorMap good = toy_checkpoint(cfg, 9);

  SUBCASE("missing tensor") {
    TensorMap map;
    for (const std::string& name : good.names()) {
      if (name == "head.b") continue;
      map.add_tensor(name, good.meta(name).dtype, good.meta(name).shape, good.tensor_bytes(name));
    }
    CHECK_THROWS_WITH_AS(decoder_loss(map, cfg, {dec_example({1}, {2})}),
                         doctest::Contains("missing tensor"), validation_error);
  }
  SUBCASE("wrong shape") {
    ToyArchConfig other = cfg;
    other.d_ff = cfg.d_ff + 1;
    const TensorMap map = toy_checkpoint(other, 9);
    CHECK_THROWS_WITH_AS(decoder_loss(map, cfg, {dec_example({1}, {2})}),
                         doctest::Contains("wrong shape"), validation_error);
  }
  SUBCASE("unexpected tensor") {
    TensorMap map;
    for (const std::string& name : good.names()) {
      map.add_tensor(name, good.meta(name).dtype, good.meta(name).shape, good.tensor_bytes(name));
    }
    map.add_tensor("extra", Dtype::F32, {1}, encode_values(Dtype::F32, {0.0}));
    CHECK_THROWS_WITH_AS(decoder_loss(map, cfg, {dec_example({1}, {2})}),
                         doctest::Contains("unexpected tensor"), validation_error);
  }
}

TEST_CASE("sequence and example validation") {
  const ToyArchConfig cfg = small_decoder();
  const TensorMap map = toy_checkpoint(cfg, 10);

  std::vector<int> long_input(cfg.max_seq_len, 1);
  CHECK_THROWS_WITH_AS(decoder_loss(map, cfg, {dec_example(long_input, {1})}),
                       doctest::Contains("exceeds max_seq_len"), validation_error);
  CHECK_THROWS_WITH_AS(decoder_loss(map, cfg, {dec_example({1}, {})}),
                       doctest::Contains("empty target"), validation_error);
  CHECK_THROWS_WITH_AS(decoder_loss(map, cfg, {dec_example({1}, {99})}),
                       doctest::Contains("outside the vocabulary"), validation_error);
  CHECK_THROWS_AS(decoder_loss(map, cfg, {}), validation_error);

  ToyArchConfig bad = cfg;
  bad.n_heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("divisible"), validation_error);
}

TEST_CASE("architecture config files") {
  TempDir dir;
  {
    std::ofstream out(dir.file("arch.json"));
    out << R"({"vocab_size": 300, "d_model": 16, "n_layers": 2, "n_heads": 4,
               "d_ff": 32, "max_seq_len": 64, "kind": "decoder"})";
  }
  const ToyArchConfig cfg = load_arch_config(dir.file("arch.json"));
  CHECK(cfg.vocab_size == 300);
  CHECK(cfg.n_heads == 4);
  CHECK(cfg.kind == ExampleKind::Decoder);

  {
    std::ofstream out(dir.file("bad.json"));
    out << R"({"vocab_size": 300})";
  }
  CHECK_THROWS_AS(load_arch_config(dir.file("bad.json")), validation_error);
}

TEST_CASE("byte-tokenized text examples evaluate end to end") {
  ToyArchConfig cfg;
  cfg.vocab_size = 256;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 8;
  cfg.max_seq_len = 32;
  cfg.kind = ExampleKind::Decoder;
  const TensorMap map = toy_checkpoint(cfg, 11);

  FewShotSet set;
  set.task_id = "demo";
  set.decoder_examples = {{"ab", "cd"}, {"xy", "z"}};
  const CandidateLosses entry = evaluate_loss(map, cfg, set, "m");
  CHECK(entry.id == "m");
  CHECK(entry.losses.size() == 2);
  const double direct =
      decoder_loss(map, cfg, {dec_example({'a', 'b'}, {'c', 'd'})}).aggregate;
  CHECK(std::abs(entry.losses[0] - direct) < 1e-12);
}
