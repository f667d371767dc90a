#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "slg/cli.hpp"
#include "slg/corpus.hpp"
#include "slg/eval.hpp"
#include "slg/rng.hpp"

using namespace slg;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_w = 8;
  cfg.seed = 7;
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
  cfg.time_scale = 0.02;
  return cfg;
}

// grader that replays the gold labels
class OracleGrader : public Grader {
 public:
  std::string tag() const override { return "oracle"; }
  std::string arch() const override { return "Uni"; }
  bool has_ori_overall() const override { return true; }
  Prediction predict(const Session& s) const override {
    Prediction p;
    p.p1 = s.labels.p1;
    p.p3 = s.labels.p3;
    p.p4 = s.labels.p4;
    p.p5 = s.labels.p5;
    p.ori_overall = s.labels.overall;
    p.part_mean_overall = overall_from_parts(p.p1, p.p3, p.p4, p.p5);
    return p;
  }
};

class ConstantGrader : public Grader {
 public:
  explicit ConstantGrader(double v, double ori) : v_(v), ori_(ori) {}
  std::string tag() const override { return "const"; }
  std::string arch() const override { return "Uni"; }
  bool has_ori_overall() const override { return true; }
  Prediction predict(const Session&) const override {
    Prediction p;
    p.p1 = p.p3 = p.p4 = p.p5 = v_;
    p.ori_overall = ori_;
    p.part_mean_overall = overall_from_parts(v_, v_, v_, v_);
    return p;
  }

 private:
  double v_, ori_;
};

}  // namespace

TEST_CASE("rmse hand cases and brute-force agreement") {
  CHECK(rmse({3, 4}, {4, 3}) == 1.0);
  CHECK(rmse({2, 2, 2}, {2, 2, 2}) == 0.0);
  CHECK_THROWS(rmse({}, {}));
  CHECK_THROWS(rmse({1.0}, {1.0, 2.0}));

  Rng rng(9);
  std::vector<double> a(1000), b(1000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform(2.0, 5.5);
    b[i] = rng.uniform(2.0, 5.5);
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(std::abs(rmse(a, b) - std::sqrt(ss / 1000.0)) < 1e-12);
}

TEST_CASE("pcc affine cases, brute force, and the constant guard") {
  std::vector<double> x = {1, 2, 3, 4, 5};
  std::vector<double> y;
  for (double v : x) y.push_back(2 * v + 1);
  CHECK(pcc(x, y) == Catch::Approx(1.0).margin(1e-12));
  std::vector<double> neg;
  for (double v : x) neg.push_back(-v);
  CHECK(pcc(x, neg) == Catch::Approx(-1.0).margin(1e-12));
  CHECK_THROWS(pcc({1, 1, 1}, {1, 2, 3}));
  CHECK_THROWS(pcc({1}, {1}));

  Rng rng(10);
  std::vector<double> a(1000), b(1000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.gaussian();
    b[i] = 0.6 * a[i] + rng.gaussian();
  }
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= 1000;
  mb /= 1000;
  double cab = 0, ca = 0, cb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cab += (a[i] - ma) * (b[i] - mb);
    ca += (a[i] - ma) * (a[i] - ma);
    cb += (b[i] - mb) * (b[i] - mb);
  }
  CHECK(std::abs(pcc(a, b) - cab / std::sqrt(ca * cb)) < 1e-10);
}

TEST_CASE("tolerance accuracy counts the boundary as inside") {
  CHECK(tolerance_accuracy({3, 3, 3}, {3.4, 3.5, 3.6}, 0.5) ==
        Catch::Approx(200.0 / 3.0).margin(1e-9));
  CHECK(tolerance_accuracy({2, 2}, {4, 4}, 1.0) == 0.0);
  CHECK(tolerance_accuracy({3, 4}, {3, 4}, 0.5) == 100.0);
  CHECK_THROWS(tolerance_accuracy({}, {}, 0.5));
  CHECK_THROWS(tolerance_accuracy({1.0}, {1.0}, 0.0));
}

TEST_CASE("metrics are invariant under joint permutation") {
  Rng rng(11);
  std::vector<double> a(64), b(64);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform(2.0, 5.5);
    b[i] = rng.uniform(2.0, 5.5);
  }
  auto a2 = a;
  auto b2 = b;
  for (std::size_t i = 0; i + 1 < a2.size(); i += 2) {
    std::swap(a2[i], a2[i + 1]);
    std::swap(b2[i], b2[i + 1]);
  }
  CHECK(rmse(a, b) == Catch::Approx(rmse(a2, b2)).margin(1e-15));
  CHECK(tolerance_accuracy(a, b, 0.5) == tolerance_accuracy(a2, b2, 0.5));
}

TEST_CASE("a perfect oracle evaluates to zero error and full accuracy") {
  const auto sessions = generate_corpus(24, 200, tiny_gen());
  const auto rep = evaluate(OracleGrader(), sessions,
                            {OverallMode::PartMean, OverallMode::OriHead}, "h");
  for (const auto& cell : rep.parts) {
    REQUIRE(cell.has_value());
    CHECK(cell->rmse == 0.0);
  }
  REQUIRE(rep.overall.size() == 2);
  for (const auto& row : rep.overall) {
    CHECK(row.cell.rmse == 0.0);
    CHECK(row.acc_05 == 100.0);
    CHECK(row.acc_10 == 100.0);
  }
}

TEST_CASE("a constant predictor scores the label spread and undefined pcc") {
  GenConfig cfg;  // default-size features are irrelevant here
  cfg.time_scale = 0.02;
  const auto sessions = generate_corpus(256, 201, cfg);
  const auto rep =
      evaluate(ConstantGrader(3.75, 3.75), sessions, {OverallMode::PartMean}, "h");
  const auto st = label_stats(sessions);
  REQUIRE(rep.overall.size() == 1);
  CHECK_FALSE(rep.overall[0].cell.pcc.has_value());
  // rmse of a constant mid-scale predictor ~ sqrt(std^2 + bias^2) of labels
  const double mean_err = st.mean[4] - 3.75;
  const double expect =
      std::sqrt(st.stddev[4] * st.stddev[4] + mean_err * mean_err);
  CHECK(std::abs(rep.overall[0].cell.rmse - expect) < 0.05);
}

TEST_CASE("overall modes differ only in the overall row") {
  const auto sessions = generate_corpus(16, 202, tiny_gen());
  const ConstantGrader grader(3.5, 4.25);  // ori head deviates from part mean
  const auto rep_pm = evaluate(grader, sessions, {OverallMode::PartMean}, "h");
  const auto rep_ori = evaluate(grader, sessions, {OverallMode::OriHead}, "h");
  for (int p = 0; p < kNumParts; ++p) {
    CHECK(rep_pm.parts[static_cast<std::size_t>(p)]->rmse ==
          rep_ori.parts[static_cast<std::size_t>(p)]->rmse);
  }
  CHECK(rep_pm.overall[0].cell.rmse != rep_ori.overall[0].cell.rmse);
}

TEST_CASE("masked labels are excluded per target, absent cells stay absent") {
  auto sessions = generate_corpus(12, 203, tiny_gen());
  for (auto& s : sessions) {
    s.mask.m[1] = false;  // no P3 labels anywhere
    s.mask.m[4] = false;
  }
  sessions[0].mask.m[0] = false;
  const auto rep = evaluate(OracleGrader(), sessions, {OverallMode::PartMean}, "h");
  CHECK_FALSE(rep.parts[1].has_value());
  CHECK(rep.overall.empty());
  REQUIRE(rep.parts[0].has_value());
  CHECK(rep.parts[0]->n == 11);
  CHECK(rep.parts[3]->n == 12);
}

TEST_CASE("report json round-trips") {
  const auto sessions = generate_corpus(8, 204, tiny_gen());
  auto masked = sessions;
  for (auto& s : masked) s.mask.m[2] = false;
  const auto rep = evaluate(ConstantGrader(3.0, 3.0), masked,
                            {OverallMode::PartMean, OverallMode::OriHead}, "hash77");
  const auto j = report_to_json(rep);
  const auto back = report_from_json(nlohmann::ordered_json::parse(j.dump()));
  CHECK(back.model_tag == rep.model_tag);
  CHECK(back.corpus_hash == "hash77");
  CHECK(back.n_sessions == rep.n_sessions);
  CHECK_FALSE(back.parts[2].has_value());
  CHECK(back.parts[0]->rmse == rep.parts[0]->rmse);
  CHECK(back.parts[0]->pcc.has_value() == rep.parts[0]->pcc.has_value());
  REQUIRE(back.overall.size() == 2);
  CHECK(back.overall[0].cell.rmse == rep.overall[0].cell.rmse);
  CHECK(back.overall[1].acc_05 == rep.overall[1].acc_05);
  const std::string text = report_to_text(rep);
  CHECK(text.find("overall(part_mean)") != std::string::npos);
  CHECK(text.find("overall(ori_head)") != std::string::npos);
}

TEST_CASE("ctg averaging is order-invariant and passes single responses through") {
  auto session = generate_corpus(1, 205, tiny_gen())[0];
  const FrozenEncoder enc(tiny_enc());
  GraderModel model(response_model_config(tiny_model()));
  Rng rng(3);
  model.head_w().fill_gaussian(rng, 0.3);
  const CtgGrader grader(model, enc);

  const auto base = grader.predict(session);

  // single-response parts: the part score equals that response's score
  const auto& p3_response = session.responses[6];
  REQUIRE(p3_response.part == PartId::P3);
  const auto seq = build_response_sequence(p3_response, enc, model);
  CHECK(base.p3 == model.forward_raw(seq)[0]);

  // permuting P1 responses leaves every part mean unchanged
  std::swap(session.responses[0], session.responses[3]);
  const auto permuted = grader.predict(session);
  CHECK(permuted.p1 == Catch::Approx(base.p1).margin(1e-12));
  CHECK(permuted.p3 == base.p3);
  CHECK(permuted.p4 == base.p4);
  CHECK(permuted.p5 == base.p5);
}

TEST_CASE("stg members are isolated per part and count 4x parameters") {
  GenConfig gcfg = tiny_gen();
  const auto corpus = generate_corpus(8, 206, gcfg);
  const FrozenEncoder enc(tiny_enc());
  TrainConfig tcfg;
  tcfg.lr = 1e-3;
  tcfg.epochs = 1;
  tcfg.grad_accum = 2;
  tcfg.warmup_steps = 1;
  tcfg.seed = 21;

  auto members_a = train_stg(corpus, tiny_model(), enc, tcfg);

  // alter P1 labels only; P3/P4/P5 graders must come out bit-identical
  auto altered = corpus;
  for (auto& s : altered) s.labels.p1 = 2.0;
  auto members_b = train_stg(altered, tiny_model(), enc, tcfg);

  auto equal_params = [](GraderModel& x, GraderModel& y) {
    const auto rx = x.trainable_parameters();
    const auto ry = y.trainable_parameters();
    for (std::size_t i = 0; i < rx.size(); ++i)
      if (std::memcmp(rx[i].data, ry[i].data, rx[i].n * sizeof(double)) != 0)
        return false;
    return true;
  };
  CHECK_FALSE(equal_params(*members_a[0].model, *members_b[0].model));
  CHECK(equal_params(*members_a[1].model, *members_b[1].model));
  CHECK(equal_params(*members_a[2].model, *members_b[2].model));
  CHECK(equal_params(*members_a[3].model, *members_b[3].model));

  long total = 0;
  for (auto& m : members_a) total += m.model->trainable_count();
  CHECK(total == 4 * members_a[0].model->trainable_count());

  // all four graders perfect implies a perfect overall
  std::array<const GraderModel*, kNumParts> ptrs{};
  for (int p = 0; p < kNumParts; ++p)
    ptrs[static_cast<std::size_t>(p)] = members_a[static_cast<std::size_t>(p)].model.get();
  StgGrader grader(ptrs, enc);
  const auto pr = grader.predict(corpus[0]);
  CHECK(pr.part_mean_overall ==
        overall_from_parts(pr.p1, pr.p3, pr.p4, pr.p5));
}

TEST_CASE("scatter export writes parseable rows with a pcc header") {
  const auto sessions = generate_corpus(10, 207, tiny_gen());
  const fs::path path = fs::temp_directory_path() / "slg_scatter.csv";

  const ConstantGrader a(3.0, 3.0);
  const OracleGrader b;
  const auto result = export_scatter(b, b, sessions, path);
  CHECK(result.inter_model_pcc == Catch::Approx(1.0).margin(1e-12));

  export_scatter(b, a, sessions, path);
  const std::string csv = read_file(path);
  std::istringstream in(csv);
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line.rfind("# pcc=", 0) == 0);
  const double header_pcc = std::stod(line.substr(6));
  REQUIRE(std::getline(in, line));
  CHECK(line == "session_id,pred_a,pred_b,gold");
  std::vector<double> xs, ys;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    std::size_t c1 = line.find(',');
    std::size_t c2 = line.find(',', c1 + 1);
    std::size_t c3 = line.find(',', c2 + 1);
    xs.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
    ys.push_back(std::stod(line.substr(c2 + 1, c3 - c2 - 1)));
  }
  CHECK(rows == 10);
  // a constant column makes the pair undefined; exporter reports 1.0 only
  // for identical constants, so recompute with the gold column jitter
  bool constant = true;
  for (double v : ys) constant = constant && v == ys[0];
  if (!constant) {
    CHECK(std::abs(pcc(xs, ys) - header_pcc) < 1e-9);
  }
  fs::remove(path);
}

TEST_CASE("comparison refuses mixed corpora and sorts by rmse") {
  const auto sessions = generate_corpus(8, 208, tiny_gen());
  const auto rep_good = evaluate(OracleGrader(), sessions, {OverallMode::PartMean}, "h1");
  const auto rep_const =
      evaluate(ConstantGrader(3.75, 3.75), sessions, {OverallMode::PartMean}, "h1");
  auto rep_other = rep_const;
  rep_other.corpus_hash = "h2";

  CHECK_THROWS(slg::cli::comparison_table({rep_good, rep_other}));
  const std::string table = slg::cli::comparison_table({rep_const, rep_good});
  const auto oracle_at = table.find("oracle");
  const auto const_at = table.find("const");
  REQUIRE(oracle_at != std::string::npos);
  REQUIRE(const_at != std::string::npos);
  CHECK(oracle_at < const_at);  // lower rmse sorts first
}
