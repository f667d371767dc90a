#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "slg/backbone.hpp"
#include "slg/common.hpp"
#include "slg/corpus.hpp"
#include "slg/rng.hpp"
#include "slg/scale.hpp"
#include "slg/speechprior.hpp"
#include "slg/train.hpp"

namespace slg {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double rmse(const std::vector<double>& pred,
                   const std::vector<double>& gold) {
  if (pred.size() != gold.size()) throw errf("rmse: length mismatch");
  if (pred.empty()) throw errf("rmse: empty input");
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gold[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(pred.size()));
}

inline double pcc(const std::vector<double>& pred,
                  const std::vector<double>& gold) {
  if (pred.size() != gold.size()) throw errf("pcc: length mismatch");
  if (pred.size() < 2) throw errf("pcc: needs at least two points");
  const double n = static_cast<double>(pred.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ma += pred[i];
    mb += gold[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - ma;
    const double b = gold[i] - mb;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  if (saa == 0.0 || sbb == 0.0)
    throw errf("pcc: undefined for constant input");
  return sab / std::sqrt(saa * sbb);
}

// Percentage within +-tau, boundary inclusive.
inline double tolerance_accuracy(const std::vector<double>& pred,
                                 const std::vector<double>& gold, double tau) {
  if (pred.size() != gold.size()) throw errf("tolerance_accuracy: length mismatch");
  if (pred.empty()) throw errf("tolerance_accuracy: empty input");
  if (!(tau > 0)) throw errf("tolerance_accuracy: tau must be positive");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (std::abs(pred[i] - gold[i]) <= tau) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Graders: anything that maps a session to a Prediction.
// ---------------------------------------------------------------------------

class Grader {
 public:
  virtual ~Grader() = default;
  virtual std::string tag() const = 0;
  virtual std::string arch() const = 0;  // "Ens" or "Uni"
  virtual bool has_ori_overall() const = 0;
  virtual Prediction predict(const Session& s) const = 0;
};

// Unified session-level grader, optionally with the prior prefix.
class MtlGrader : public Grader {
 public:
  MtlGrader(const GraderModel& model, const FrozenEncoder& encoder,
            const AppBundle* app)
      : model_(model), encoder_(encoder), app_(app) {}

  std::string tag() const override { return app_ ? "mtl_app" : "mtl"; }
  std::string arch() const override { return "Uni"; }
  bool has_ori_overall() const override { return true; }

  Prediction predict(const Session& s) const override {
    std::optional<AppPrior> prior;
    if (app_) prior = prior_for_session(*app_, s);
    const auto seq = build_session_sequence(s, encoder_, prior, model_);
    return predict_session(model_, seq);
  }

 private:
  const GraderModel& model_;
  const FrozenEncoder& encoder_;
  const AppBundle* app_;
};

// Response-level grader pooled over all parts: per-response scores averaged
// within each part, overall from the part means.
class CtgGrader : public Grader {
 public:
  CtgGrader(const GraderModel& model, const FrozenEncoder& encoder)
      : model_(model), encoder_(encoder) {}

  std::string tag() const override { return "ctg"; }
  std::string arch() const override { return "Uni"; }
  bool has_ori_overall() const override { return false; }

  Prediction predict(const Session& s) const override {
    std::array<double, kNumParts> sum{};
    std::array<int, kNumParts> count{};
    for (const auto& r : s.responses) {
      const auto seq = build_response_sequence(r, encoder_, model_);
      const double y = model_.forward_raw(seq)[0];
      sum[static_cast<std::size_t>(static_cast<int>(r.part))] += y;
      count[static_cast<std::size_t>(static_cast<int>(r.part))] += 1;
    }
    Prediction pr;
    std::array<double, kNumParts> part{};
    for (int p = 0; p < kNumParts; ++p) {
      if (count[static_cast<std::size_t>(p)] == 0)
        throw errf("ctg predict: session %s missing %s responses",
                   s.session_id.c_str(), part_name(static_cast<PartId>(p)));
      part[static_cast<std::size_t>(p)] =
          sum[static_cast<std::size_t>(p)] / count[static_cast<std::size_t>(p)];
    }
    pr.p1 = part[0];
    pr.p3 = part[1];
    pr.p4 = part[2];
    pr.p5 = part[3];
    pr.part_mean_overall = overall_from_parts(part[0], part[1], part[2], part[3]);
    pr.ori_overall = pr.part_mean_overall;  // no dedicated overall head
    return pr;
  }

 private:
  const GraderModel& model_;
  const FrozenEncoder& encoder_;
};

// Ensemble of four per-part response-level graders.
class StgGrader : public Grader {
 public:
  StgGrader(std::array<const GraderModel*, kNumParts> models,
            const FrozenEncoder& encoder)
      : models_(models), encoder_(encoder) {}

  std::string tag() const override { return "stg"; }
  std::string arch() const override { return "Ens"; }
  bool has_ori_overall() const override { return false; }

  Prediction predict(const Session& s) const override {
    std::array<double, kNumParts> sum{};
    std::array<int, kNumParts> count{};
    for (const auto& r : s.responses) {
      const int p = static_cast<int>(r.part);
      const auto seq =
          build_response_sequence(r, encoder_, *models_[static_cast<std::size_t>(p)]);
      sum[static_cast<std::size_t>(p)] +=
          models_[static_cast<std::size_t>(p)]->forward_raw(seq)[0];
      count[static_cast<std::size_t>(p)] += 1;
    }
    Prediction pr;
    std::array<double, kNumParts> part{};
    for (int p = 0; p < kNumParts; ++p) {
      if (count[static_cast<std::size_t>(p)] == 0)
        throw errf("stg predict: session %s missing %s responses",
                   s.session_id.c_str(), part_name(static_cast<PartId>(p)));
      part[static_cast<std::size_t>(p)] =
          sum[static_cast<std::size_t>(p)] / count[static_cast<std::size_t>(p)];
    }
    pr.p1 = part[0];
    pr.p3 = part[1];
    pr.p4 = part[2];
    pr.p5 = part[3];
    pr.part_mean_overall = overall_from_parts(part[0], part[1], part[2], part[3]);
    pr.ori_overall = pr.part_mean_overall;
    return pr;
  }

 private:
  std::array<const GraderModel*, kNumParts> models_;
  const FrozenEncoder& encoder_;
};

// Standalone acoustic-prior grader.
class AppGrader : public Grader {
 public:
  explicit AppGrader(const AppBundle& bundle) : bundle_(bundle) {}

  std::string tag() const override { return "app_only"; }
  std::string arch() const override { return "Ens"; }
  bool has_ori_overall() const override { return false; }

  Prediction predict(const Session& s) const override {
    const auto scores = app_part_scores(bundle_, s);
    Prediction pr;
    pr.p1 = scores.part[0];
    pr.p3 = scores.part[1];
    pr.p4 = scores.part[2];
    pr.p5 = scores.part[3];
    pr.part_mean_overall = scores.overall;
    pr.ori_overall = scores.overall;
    return pr;
  }

 private:
  const AppBundle& bundle_;
};

// ---------------------------------------------------------------------------
// Evaluation reports
// ---------------------------------------------------------------------------

enum class OverallMode { OriHead, PartMean };

inline const char* overall_mode_name(OverallMode m) {
  return m == OverallMode::OriHead ? "ori_head" : "part_mean";
}

struct MetricCell {
  int n = 0;
  double rmse = 0.0;
  std::optional<double> pcc;  // undefined on constant predictions
};

struct OverallRow {
  OverallMode mode = OverallMode::PartMean;
  MetricCell cell;
  double acc_05 = 0.0;
  double acc_10 = 0.0;
};

struct EvalReport {
  std::string model_tag;
  std::string arch;
  std::string corpus_hash;
  int n_sessions = 0;
  std::array<std::optional<MetricCell>, kNumParts> parts;
  std::vector<OverallRow> overall;

  const OverallRow& primary_overall() const {
    if (overall.empty()) throw errf("EvalReport: no overall row");
    return overall.front();
  }
};

namespace detail {

inline MetricCell metric_cell(const std::vector<double>& pred,
                              const std::vector<double>& gold) {
  MetricCell c;
  c.n = static_cast<int>(pred.size());
  c.rmse = rmse(pred, gold);
  try {
    c.pcc = pcc(pred, gold);
  } catch (const std::exception&) {
    c.pcc.reset();  // constant input: report as undefined
  }
  return c;
}

}  // namespace detail

// Collects predictions once and scores each requested overall mode. Masked
// labels are excluded per target; a target with no labels is left absent.
inline EvalReport evaluate(const Grader& grader,
                           const std::vector<Session>& sessions,
                           const std::vector<OverallMode>& modes,
                           const std::string& corpus_hash_hex,
                           std::vector<Prediction>* predictions_out = nullptr) {
  if (sessions.empty()) throw errf("evaluate: empty corpus");
  EvalReport rep;
  rep.model_tag = grader.tag();
  rep.arch = grader.arch();
  rep.corpus_hash = corpus_hash_hex;
  rep.n_sessions = static_cast<int>(sessions.size());

  std::vector<Prediction> preds;
  preds.reserve(sessions.size());
  for (const auto& s : sessions) preds.push_back(grader.predict(s));
  if (predictions_out) *predictions_out = preds;

  for (int p = 0; p < kNumParts; ++p) {
    std::vector<double> hat, gold;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      if (!sessions[i].mask.m[static_cast<std::size_t>(p)]) continue;
      hat.push_back(preds[i].part_score(static_cast<PartId>(p)));
      gold.push_back(sessions[i].labels.component(p));
    }
    if (!hat.empty())
      rep.parts[static_cast<std::size_t>(p)] = detail::metric_cell(hat, gold);
  }

  for (OverallMode mode : modes) {
    std::vector<double> hat, gold;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      if (!sessions[i].mask.m[4]) continue;
      hat.push_back(mode == OverallMode::OriHead ? preds[i].ori_overall
                                                 : preds[i].part_mean_overall);
      gold.push_back(sessions[i].labels.overall);
    }
    if (hat.empty()) continue;
    OverallRow row;
    row.mode = mode;
    row.cell = detail::metric_cell(hat, gold);
    row.acc_05 = tolerance_accuracy(hat, gold, 0.5);
    row.acc_10 = tolerance_accuracy(hat, gold, 1.0);
    rep.overall.push_back(row);
  }
  return rep;
}

// --- JSON / text rendering -------------------------------------------------

inline nlohmann::ordered_json report_to_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["model"] = rep.model_tag;
  j["arch"] = rep.arch;
  j["corpus_hash"] = rep.corpus_hash;
  j["n_sessions"] = rep.n_sessions;
  nlohmann::ordered_json parts = nlohmann::ordered_json::object();
  for (int p = 0; p < kNumParts; ++p) {
    const auto& cell = rep.parts[static_cast<std::size_t>(p)];
    if (!cell) {
      parts[part_name(static_cast<PartId>(p))] = nullptr;
      continue;
    }
    nlohmann::ordered_json c;
    c["n"] = cell->n;
    c["rmse"] = cell->rmse;
    if (cell->pcc)
      c["pcc"] = *cell->pcc;
    else
      c["pcc"] = nullptr;
    parts[part_name(static_cast<PartId>(p))] = c;
  }
  j["parts"] = parts;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : rep.overall) {
    nlohmann::ordered_json r;
    r["mode"] = overall_mode_name(row.mode);
    r["n"] = row.cell.n;
    r["rmse"] = row.cell.rmse;
    if (row.cell.pcc)
      r["pcc"] = *row.cell.pcc;
    else
      r["pcc"] = nullptr;
    r["acc_le_0.5"] = row.acc_05;
    r["acc_le_1.0"] = row.acc_10;
    rows.push_back(r);
  }
  j["overall"] = rows;
  return j;
}

inline EvalReport report_from_json(const nlohmann::ordered_json& j) {
  EvalReport rep;
  rep.model_tag = j.at("model").get<std::string>();
  rep.arch = j.at("arch").get<std::string>();
  rep.corpus_hash = j.at("corpus_hash").get<std::string>();
  rep.n_sessions = j.at("n_sessions").get<int>();
  for (int p = 0; p < kNumParts; ++p) {
    const auto& c = j.at("parts").at(part_name(static_cast<PartId>(p)));
    if (c.is_null()) continue;
    MetricCell cell;
    cell.n = c.at("n").get<int>();
    cell.rmse = c.at("rmse").get<double>();
    if (!c.at("pcc").is_null()) cell.pcc = c.at("pcc").get<double>();
    rep.parts[static_cast<std::size_t>(p)] = cell;
  }
  for (const auto& r : j.at("overall")) {
    OverallRow row;
    row.mode = r.at("mode").get<std::string>() == "ori_head" ? OverallMode::OriHead
                                                             : OverallMode::PartMean;
    row.cell.n = r.at("n").get<int>();
    row.cell.rmse = r.at("rmse").get<double>();
    if (!r.at("pcc").is_null()) row.cell.pcc = r.at("pcc").get<double>();
    row.acc_05 = r.at("acc_le_0.5").get<double>();
    row.acc_10 = r.at("acc_le_1.0").get<double>();
    rep.overall.push_back(row);
  }
  return rep;
}

inline std::string report_to_text(const EvalReport& rep) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "model: %s (%s)  sessions: %d  corpus: %s\n",
                rep.model_tag.c_str(), rep.arch.c_str(), rep.n_sessions,
                rep.corpus_hash.c_str());
  out += buf;
  out += "target             n     rmse      pcc   %<=0.5   %<=1.0\n";
  for (int p = 0; p < kNumParts; ++p) {
    const auto& cell = rep.parts[static_cast<std::size_t>(p)];
    if (!cell) {
      std::snprintf(buf, sizeof(buf), "%-16s  --       --       --       --       --\n",
                    part_name(static_cast<PartId>(p)));
      out += buf;
      continue;
    }
    if (cell->pcc)
      std::snprintf(buf, sizeof(buf), "%-16s %4d  %7.4f  %7.4f       --       --\n",
                    part_name(static_cast<PartId>(p)), cell->n, cell->rmse,
                    *cell->pcc);
    else
      std::snprintf(buf, sizeof(buf), "%-16s %4d  %7.4f  undef        --       --\n",
                    part_name(static_cast<PartId>(p)), cell->n, cell->rmse);
    out += buf;
  }
  for (const auto& row : rep.overall) {
    std::string label = std::string("overall(") + overall_mode_name(row.mode) + ")";
    if (row.cell.pcc)
      std::snprintf(buf, sizeof(buf), "%-16s %4d  %7.4f  %7.4f  %7.1f  %7.1f\n",
                    label.c_str(), row.cell.n, row.cell.rmse, *row.cell.pcc,
                    row.acc_05, row.acc_10);
    else
      std::snprintf(buf, sizeof(buf), "%-16s %4d  %7.4f  undef    %7.1f  %7.1f\n",
                    label.c_str(), row.cell.n, row.cell.rmse, row.acc_05,
                    row.acc_10);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baseline training harnesses
// ---------------------------------------------------------------------------

inline ModelConfig response_model_config(ModelConfig base) {
  base.head_outputs = 1;
  return base;
}

struct TrainedModel {
  std::unique_ptr<GraderModel> model;
  std::vector<StepRecord> history;
};

inline TrainedModel train_mtl(const std::vector<Session>& corpus,
                              const ModelConfig& model_cfg,
                              const FrozenEncoder& encoder,
                              const TrainConfig& tcfg, const AppBundle* app) {
  auto model = std::make_unique<GraderModel>(model_cfg);
  SessionTask task(*model, encoder, corpus, app);
  Trainer<SessionTask> trainer(*model, task, tcfg);
  auto history = trainer.run();
  return {std::move(model), std::move(history)};
}

inline TrainedModel train_ctg(const std::vector<Session>& corpus,
                              const ModelConfig& base_cfg,
                              const FrozenEncoder& encoder,
                              const TrainConfig& tcfg) {
  auto model = std::make_unique<GraderModel>(response_model_config(base_cfg));
  ResponseTask task(*model, encoder, corpus, std::nullopt);
  Trainer<ResponseTask> trainer(*model, task, tcfg);
  auto history = trainer.run();
  return {std::move(model), std::move(history)};
}

// Four independent per-part graders; each sees only its own part's responses
// and derives its seed from (seed, part) so the members stay isolated.
inline std::array<TrainedModel, kNumParts> train_stg(
    const std::vector<Session>& corpus, const ModelConfig& base_cfg,
    const FrozenEncoder& encoder, const TrainConfig& tcfg) {
  std::array<TrainedModel, kNumParts> out;
  for (int p = 0; p < kNumParts; ++p) {
    ModelConfig cfg = response_model_config(base_cfg);
    cfg.seed = derive_seed(base_cfg.seed, 0x575a + static_cast<std::uint64_t>(p));
    TrainConfig tc = tcfg;
    tc.seed = derive_seed(tcfg.seed, 0x575a + static_cast<std::uint64_t>(p));
    auto model = std::make_unique<GraderModel>(cfg);
    ResponseTask task(*model, encoder, corpus, static_cast<PartId>(p));
    Trainer<ResponseTask> trainer(*model, task, tc);
    auto history = trainer.run();
    out[static_cast<std::size_t>(p)] = {std::move(model), std::move(history)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scatter export: predictions of two graders on the same corpus.
// ---------------------------------------------------------------------------

struct ScatterResult {
  double inter_model_pcc = 0.0;
  int n_rows = 0;
};

inline ScatterResult export_scatter(const Grader& a, const Grader& b,
                                    const std::vector<Session>& sessions,
                                    const std::filesystem::path& path) {
  if (sessions.empty()) throw errf("export_scatter: empty corpus");
  std::vector<double> pa, pb;
  std::string rows;
  char buf[256];
  for (const auto& s : sessions) {
    const double ya = a.predict(s).part_mean_overall;
    const double yb = b.predict(s).part_mean_overall;
    pa.push_back(ya);
    pb.push_back(yb);
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n",
                  s.session_id.c_str(), ya, yb, s.labels.overall);
    rows += buf;
  }
  double r;
  try {
    r = pcc(pa, pb);
  } catch (const std::exception&) {
    r = 1.0;  // identical constant predictors
  }
  std::string out;
  std::snprintf(buf, sizeof(buf), "# pcc=%.17g\n", r);
  out += buf;
  out += "session_id,pred_a,pred_b,gold\n";
  out += rows;
  write_file(path, out);
  return {r, static_cast<int>(sessions.size())};
}

}  // namespace slg
