#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <set>
#include <string>

#include "slg/backbone.hpp"
#include "slg/corpus.hpp"
#include "slg/objective.hpp"
#include "slg/rng.hpp"
#include "slg/speechprior.hpp"

using namespace slg;

namespace {

ModelConfig tiny_config(bool with_lora = true) {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_w = 8;
  cfg.seed = 77;
  if (!with_lora) cfg.lora_targets.clear();
  return cfg;
}

EncoderConfig tiny_enc() {
  EncoderConfig cfg;
  cfg.d_feat = 16;
  cfg.d_w = 8;
  return cfg;
}

GenConfig tiny_gen() {
  GenConfig cfg;
  cfg.time_scale = 0.02;  // very short responses keep sequences small
  return cfg;
}

AppPrior uniform_prior() {
  AppPrior p;
  p.probs.fill(0.125);
  return p;
}

}  // namespace

TEST_CASE("session sequence layout follows the part structure") {
  const auto session = generate_corpus(1, 9, tiny_gen())[0];
  const FrozenEncoder enc(tiny_enc());
  const GraderModel model(tiny_config());

  const auto with_prior =
      build_session_sequence(session, enc, uniform_prior(), model);
  REQUIRE(!with_prior.items.empty());
  CHECK(with_prior.items[0].kind == ItemKind::PriorPrefix);
  CHECK(with_prior.attention_mask.size() == with_prior.items.size());
  for (bool b : with_prior.attention_mask) CHECK(b);

  // exactly 13 audio spans, in canonical part order
  int spans = 0;
  int prev_part = -1, prev_index = -1;
  bool in_audio = false;
  for (const auto& it : with_prior.items) {
    if (it.kind == ItemKind::AudioFrame) {
      if (!in_audio) {
        ++spans;
        const int p = static_cast<int>(*it.part);
        const int r = *it.response_index;
        if (p == prev_part) {
          CHECK(r == prev_index + 1);
        } else {
          CHECK(p > prev_part);
        }
        prev_part = p;
        prev_index = r;
        in_audio = true;
      }
    } else {
      in_audio = false;
    }
  }
  CHECK(spans == kResponsesPerSession);

  // marker token closes the sequence
  CHECK(with_prior.items.back().kind == ItemKind::TextToken);
  CHECK(with_prior.items.back().token_id == model.marker_token());

  // prior absent: sequence starts at the first instruction token
  const auto no_prior = build_session_sequence(session, enc, std::nullopt, model);
  CHECK(no_prior.items[0].kind == ItemKind::TextToken);
  CHECK(no_prior.items.size() == with_prior.items.size() - 1);

  // deterministic layout and embeddings
  const auto again = build_session_sequence(session, enc, std::nullopt, model);
  REQUIRE(again.items.size() == no_prior.items.size());
  for (std::size_t i = 0; i < again.items.size(); ++i) {
    CHECK(again.items[i].kind == no_prior.items[i].kind);
    CHECK(again.items[i].token_id == no_prior.items[i].token_id);
    CHECK(again.items[i].embedding == no_prior.items[i].embedding);
  }
}

TEST_CASE("audio stride bounds the number of audio items") {
  const auto session = generate_corpus(1, 9, tiny_gen())[0];
  const FrozenEncoder enc(tiny_enc());
  ModelConfig cfg = tiny_config();
  cfg.audio_stride = 1;
  const GraderModel dense(cfg);
  cfg.audio_stride = 4;
  const GraderModel strided(cfg);

  auto count_audio = [&](const GraderModel& m) {
    const auto seq = build_session_sequence(session, enc, std::nullopt, m);
    std::size_t n = 0;
    for (const auto& it : seq.items)
      if (it.kind == ItemKind::AudioFrame) ++n;
    return n;
  };
  std::size_t expect_dense = 0, expect_strided = 0;
  for (const auto& r : session.responses) {
    expect_dense += r.features.t_frames;
    expect_strided += (r.features.t_frames + 3) / 4;
  }
  CHECK(count_audio(dense) == expect_dense);
  CHECK(count_audio(strided) == expect_strided);
}

TEST_CASE("empty prompts leave audio spans contiguous and valid") {
  auto session = generate_corpus(1, 10, tiny_gen())[0];
  for (auto& r : session.responses) r.prompt_text.clear();
  const FrozenEncoder enc(tiny_enc());
  const GraderModel model(tiny_config());
  const auto seq = build_session_sequence(session, enc, std::nullopt, model);
  const auto pred = model.forward_raw(seq);
  REQUIRE(pred.size() == 5);
  for (double v : pred) CHECK(std::isfinite(v));
}

TEST_CASE("over-long sequences are rejected with the session named") {
  const auto session = generate_corpus(1, 11, tiny_gen())[0];
  const FrozenEncoder enc(tiny_enc());
  ModelConfig cfg = tiny_config();
  cfg.max_context = 10;
  const GraderModel model(cfg);
  CHECK_THROWS_WITH(build_session_sequence(session, enc, std::nullopt, model),
                    Catch::Matchers::ContainsSubstring(session.session_id));
}

TEST_CASE("zeroed head weights and bias give all-zero outputs") {
  const auto session = generate_corpus(1, 12, tiny_gen())[0];
  const FrozenEncoder enc(tiny_enc());
  GraderModel model(tiny_config());
  model.head_w().zero();
  for (auto& b : model.head_b()) b = 0.0;
  const auto seq = build_session_sequence(session, enc, std::nullopt, model);
  for (double v : model.forward_raw(seq)) CHECK(v == 0.0);
}

TEST_CASE("zero-initialized adapters reproduce the frozen base exactly") {
  const auto sessions = generate_corpus(4, 13, tiny_gen());
  const FrozenEncoder enc(tiny_enc());
  const GraderModel with_lora(tiny_config(true));
  const GraderModel base(tiny_config(false));

  for (const auto& s : sessions) {
    for (const bool use_prior : {false, true}) {
      std::optional<AppPrior> prior;
      if (use_prior) prior = uniform_prior();
      const auto seq_a = build_session_sequence(s, enc, prior, with_lora);
      const auto seq_b = build_session_sequence(s, enc, prior, base);
      const auto ya = with_lora.forward_raw(seq_a);
      const auto yb = base.forward_raw(seq_b);
      for (std::size_t k = 0; k < ya.size(); ++k)
        CHECK(std::abs(ya[k] - yb[k]) <= 1e-6);
    }
  }
}

TEST_CASE("a full-rank adapter can reproduce an explicit weight delta") {
  const auto session = generate_corpus(1, 14, tiny_gen())[0];
  const FrozenEncoder enc(tiny_enc());

  ModelConfig cfg = tiny_config(false);
  cfg.lora_targets = {"attn.q"};
  cfg.lora_rank = cfg.d_model;  // full rank
  cfg.lora_alpha = 8.0;
  GraderModel wrapped(cfg);

  // delta on layer 0 wq
  Rng rng(99);
  Mat delta(static_cast<std::size_t>(cfg.d_model),
            static_cast<std::size_t>(cfg.d_model));
  delta.fill_gaussian(rng, 0.05);

  // A = I, B = (r/alpha) * delta reproduces base + delta
  auto& pair = *wrapped.layers()[0].lora[0];
  pair.a.zero();
  for (std::size_t i = 0; i < pair.a.rows; ++i) pair.a(i, i) = 1.0;
  const double inv_scale = cfg.lora_rank / cfg.lora_alpha;
  for (std::size_t i = 0; i < pair.b.rows; ++i)
    for (std::size_t j = 0; j < pair.b.cols; ++j)
      pair.b(i, j) = inv_scale * delta(i, j);
  wrapped.layers()[1].lora[0]->b.zero();

  GraderModel shifted(tiny_config(false));
  for (std::size_t i = 0; i < delta.size(); ++i)
    shifted.layers()[0].wq.a[i] += delta.a[i];

  const auto seq_a = build_session_sequence(session, enc, std::nullopt, wrapped);
  const auto seq_b = build_session_sequence(session, enc, std::nullopt, shifted);
  const auto ya = wrapped.forward_raw(seq_a);
  const auto yb = shifted.forward_raw(seq_b);
  for (std::size_t k = 0; k < ya.size(); ++k)
    CHECK(std::abs(ya[k] - yb[k]) <= 1e-6);
}

TEST_CASE("unknown adapter targets are rejected") {
  GraderModel model(tiny_config());
  CHECK_THROWS_WITH(model.wrap_lora(2, 4.0, {"attn.qq"}),
                    Catch::Matchers::ContainsSubstring("attn.qq"));
}

TEST_CASE("trainable registry matches the parameter-count formula") {
  ModelConfig cfg = tiny_config(true);
  GraderModel model(cfg);
  const int d = cfg.d_model, dff = cfg.ff_dim(), r = cfg.lora_rank;

  long lora = 0;
  lora += 4L * r * (d + d);                  // q, k, v, o
  lora += static_cast<long>(r) * (d + dff);  // fc1
  lora += static_cast<long>(r) * (dff + d);  // fc2
  lora *= cfg.n_layers;
  const long head = 5L * d + 5;
  const long adapter = static_cast<long>(d) * cfg.d_w + d;
  const long projector = static_cast<long>(d) * 8 + d;
  CHECK(model.trainable_count() == lora + head + adapter + projector);

  // no frozen tensor leaks into the trainable set
  for (const auto& ref : model.trainable_parameters()) {
    const bool ok = ref.name.find("lora") != std::string::npos ||
                    ref.name.find("head") != std::string::npos ||
                    ref.name.find("audio_adapter") != std::string::npos ||
                    ref.name.find("prior_projector") != std::string::npos;
    CHECK(ok);
  }

  // doubling the rank doubles exactly the adapter share
  ModelConfig cfg2 = cfg;
  cfg2.lora_rank = 2 * r;
  GraderModel model2(cfg2);
  CHECK(model2.trainable_count() == 2 * lora + head + adapter + projector);
}

TEST_CASE("grad registry mirrors the trainable registry") {
  GraderModel model(tiny_config());
  auto grads = model.make_grads();
  const auto refs = model.trainable_parameters();
  const auto grefs = model.grad_refs(grads);
  REQUIRE(refs.size() == grefs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    CHECK(refs[i].name == grefs[i].name);
    CHECK(refs[i].n == grefs[i].n);
    CHECK(refs[i].decay == grefs[i].decay);
  }
}

TEST_CASE("permuting responses changes the prediction") {
  auto session = generate_corpus(1, 15, tiny_gen())[0];
  const FrozenEncoder enc(tiny_enc());
  GraderModel model(tiny_config());
  // give the head something to read
  Rng rng(5);
  model.head_w().fill_gaussian(rng, 0.2);

  const auto seq = build_session_sequence(session, enc, std::nullopt, model);
  const auto base = model.forward_raw(seq);

  std::swap(session.responses[0].prompt_text, session.responses[1].prompt_text);
  std::swap(session.responses[0].features, session.responses[1].features);
  std::swap(session.responses[0].duration_s, session.responses[1].duration_s);
  const auto seq2 = build_session_sequence(session, enc, std::nullopt, model);
  const auto swapped = model.forward_raw(seq2);

  bool changed = false;
  for (std::size_t k = 0; k < base.size(); ++k)
    changed = changed || base[k] != swapped[k];
  CHECK(changed);
}

TEST_CASE("the regression head is affine in the final hidden state") {
  GraderModel model(tiny_config());
  Rng rng(21);
  model.head_w().fill_gaussian(rng, 0.3);
  const int d = model.config().d_model;
  std::vector<double> h(static_cast<std::size_t>(d));
  for (auto& v : h) v = rng.gaussian();

  auto head_apply = [&](const std::vector<double>& x) {
    std::vector<double> y(model.head_b());
    for (std::size_t o = 0; o < y.size(); ++o)
      for (std::size_t j = 0; j < x.size(); ++j)
        y[o] += model.head_w()(o, j) * x[j];
    return y;
  };
  auto h2 = h;
  for (auto& v : h2) v *= 2.0;
  const auto y1 = head_apply(h);
  const auto y2 = head_apply(h2);
  for (std::size_t o = 0; o < y1.size(); ++o)
    CHECK(y2[o] - model.head_b()[o] ==
          Catch::Approx(2.0 * (y1[o] - model.head_b()[o])).margin(1e-12));
}

TEST_CASE("part_mean_overall is exactly the mean of the four part heads") {
  const auto sessions = generate_corpus(4, 16, tiny_gen());
  const FrozenEncoder enc(tiny_enc());
  GraderModel model(tiny_config());
  Rng rng(31);
  model.head_w().fill_gaussian(rng, 0.3);
  for (const auto& s : sessions) {
    const auto seq = build_session_sequence(s, enc, uniform_prior(), model);
    const auto pr = predict_session(model, seq);
    CHECK(pr.part_mean_overall ==
          overall_from_parts(pr.p1, pr.p3, pr.p4, pr.p5));
  }
}

TEST_CASE("analytic gradients match finite differences end to end") {
  auto session = generate_corpus(1, 17, tiny_gen())[0];
  const FrozenEncoder enc(tiny_enc());
  GraderModel model(tiny_config());
  Rng rng(41);
  model.head_w().fill_gaussian(rng, 0.2);

  const auto seq = build_session_sequence(session, enc, uniform_prior(), model);
  const std::array<bool, 5> mask = {true, true, false, true, true};

  auto make_batch = [&](const std::vector<double>& pred) {
    Batch b;
    std::array<double, 5> row{};
    std::array<double, 5> tgt{};
    for (int k = 0; k < 5; ++k) {
      row[static_cast<std::size_t>(k)] = pred[static_cast<std::size_t>(k)];
      tgt[static_cast<std::size_t>(k)] = session.labels.component(k);
    }
    b.predictions.push_back(row);
    b.targets.push_back(tgt);
    b.masks.push_back(mask);
    return b;
  };
  auto loss_of = [&]() { return masked_mse(make_batch(model.forward_raw(seq))); };

  auto grads = model.make_grads();
  {
    GraderModel::Cache cache;
    const auto pred = model.forward_raw(seq, &cache);
    const auto dpred = masked_mse_grad(make_batch(pred));
    std::vector<double> d(dpred[0].begin(), dpred[0].end());
    model.backward(seq, cache, d, grads);
  }

  const auto refs = model.trainable_parameters();
  const auto grefs = model.grad_refs(grads);
  Rng pick(51);
  const double eps = 1e-4;
  int checked = 0;
  for (int trial = 0; trial < 80; ++trial) {
    const std::size_t i = pick.below(refs.size());
    if (refs[i].n == 0) continue;
    const std::size_t j = pick.below(refs[i].n);
    double& p = refs[i].data[j];
    const double keep = p;
    p = keep + eps;
    const double up = loss_of();
    p = keep - eps;
    const double dn = loss_of();
    p = keep;
    const double fd = (up - dn) / (2 * eps);
    const double an = grefs[i].data[j];
    const double denom = std::max(std::abs(fd), 1e-8);
    INFO(refs[i].name << "[" << j << "] analytic " << an << " fd " << fd);
    CHECK(std::abs(an - fd) / denom < 1e-3);
    ++checked;
  }
  CHECK(checked >= 60);
}

TEST_CASE("forward validates inputs") {
  GraderModel model(tiny_config());
  SessionSequence empty;
  CHECK_THROWS(model.forward_raw(empty));

  const auto session = generate_corpus(1, 18, tiny_gen())[0];
  const FrozenEncoder enc(tiny_enc());
  auto seq = build_session_sequence(session, enc, std::nullopt, model);
  seq.attention_mask[0] = false;
  CHECK_THROWS(model.forward_raw(seq));
}
