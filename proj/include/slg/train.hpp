#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "slg/backbone.hpp"
#include "slg/checkpoint.hpp"
#include "slg/common.hpp"
#include "slg/corpus.hpp"
#include "slg/objective.hpp"
#include "slg/rng.hpp"
#include "slg/speechprior.hpp"

namespace slg {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  int warmup_steps = 100;
  double clip_norm = 1.0;
  int micro_batch = 1;
  int grad_accum = 8;
  int epochs = 3;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (lr < 0 || weight_decay < 0 || clip_norm <= 0)
      throw std::invalid_argument("TrainConfig: lr/decay/clip must be non-negative");
    if (warmup_steps < 0 || micro_batch < 1 || grad_accum < 1 || epochs < 1)
      throw std::invalid_argument("TrainConfig: counts must be positive");
  }
};

// Linear warmup from zero, then cosine decay to zero at total_steps.
inline double lr_at(long step, long total_steps, const TrainConfig& cfg) {
  if (step < 0 || step > total_steps)
    throw errf("lr_at: step %ld outside [0, %ld]", step, total_steps);
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step) / cfg.warmup_steps;
  const long span = total_steps - cfg.warmup_steps;
  if (span <= 0) return cfg.lr;
  const double phase =
      3.14159265358979323846 * static_cast<double>(step - cfg.warmup_steps) /
      static_cast<double>(span);
  return cfg.lr * 0.5 * (1.0 + std::cos(phase));
}

// ---------------------------------------------------------------------------
// Training tasks: one forward produces a 5-wide target row (session-level
// multi-target, or a single part slot for response-level graders), so every
// task trains through the same masked objective.
// ---------------------------------------------------------------------------

struct ExampleRow {
  std::array<double, 5> pred{};
  std::array<double, 5> target{};
  std::array<bool, 5> mask{};
};

// Session-level task: one example per session, all five heads.
class SessionTask {
 public:
  SessionTask(GraderModel& model, const FrozenEncoder& encoder,
              const std::vector<Session>& sessions, const AppBundle* app)
      : model_(model) {
    if (model.config().head_outputs != 5)
      throw errf("SessionTask: model must have 5 head outputs");
    sequences_.reserve(sessions.size());
    rows_.reserve(sessions.size());
    for (const auto& s : sessions) {
      std::optional<AppPrior> prior;
      if (app) prior = prior_for_session(*app, s);
      sequences_.push_back(build_session_sequence(s, encoder, prior, model));
      ExampleRow row;
      for (int k = 0; k < 5; ++k) {
        row.target[static_cast<std::size_t>(k)] = s.labels.component(k);
        row.mask[static_cast<std::size_t>(k)] = s.mask.m[static_cast<std::size_t>(k)];
      }
      rows_.push_back(row);
    }
  }

  std::size_t size() const { return sequences_.size(); }

  ExampleRow forward(std::size_t idx, GraderModel::Cache& cache) const {
    const auto pred = model_.forward_raw(sequences_[idx], &cache);
    ExampleRow row = rows_[idx];
    for (int k = 0; k < 5; ++k) row.pred[static_cast<std::size_t>(k)] = pred[static_cast<std::size_t>(k)];
    return row;
  }

  void backward(std::size_t idx, const GraderModel::Cache& cache,
                const std::array<double, 5>& dpred, GraderGrads& grads) const {
    std::vector<double> d(dpred.begin(), dpred.end());
    model_.backward(sequences_[idx], cache, d, grads);
  }

 private:
  GraderModel& model_;
  std::vector<SessionSequence> sequences_;
  std::vector<ExampleRow> rows_;
};

// Response-level task: one example per response, target in the part's slot.
// part_filter restricts the pool to a single part (per-part ensemble member).
class ResponseTask {
 public:
  ResponseTask(GraderModel& model, const FrozenEncoder& encoder,
               const std::vector<Session>& sessions,
               std::optional<PartId> part_filter)
      : model_(model) {
    if (model.config().head_outputs != 1)
      throw errf("ResponseTask: model must have a single head output");
    for (const auto& s : sessions) {
      for (const auto& r : s.responses) {
        if (part_filter && r.part != *part_filter) continue;
        const int k = static_cast<int>(r.part);
        if (!s.mask.m[static_cast<std::size_t>(k)]) continue;  // unlabeled part
        sequences_.push_back(build_response_sequence(r, encoder, model));
        slots_.push_back(k);
        targets_.push_back(s.labels.component(k));
      }
    }
    if (sequences_.empty()) throw errf("ResponseTask: no labeled responses");
  }

  std::size_t size() const { return sequences_.size(); }

  ExampleRow forward(std::size_t idx, GraderModel::Cache& cache) const {
    const auto pred = model_.forward_raw(sequences_[idx], &cache);
    ExampleRow row;
    const auto k = static_cast<std::size_t>(slots_[idx]);
    row.pred[k] = pred[0];
    row.target[k] = targets_[idx];
    row.mask[k] = true;
    return row;
  }

  void backward(std::size_t idx, const GraderModel::Cache& cache,
                const std::array<double, 5>& dpred, GraderGrads& grads) const {
    const std::vector<double> d = {dpred[static_cast<std::size_t>(slots_[idx])]};
    model_.backward(sequences_[idx], cache, d, grads);
  }

 private:
  GraderModel& model_;
  std::vector<SessionSequence> sequences_;
  std::vector<int> slots_;
  std::vector<double> targets_;
};

// ---------------------------------------------------------------------------
// Trainer: Adam with decoupled weight decay over the trainable set only,
// per-micro-batch loss normalization, gradient averaging across the
// accumulation group, and global-norm clipping before every step.
// ---------------------------------------------------------------------------

struct StepRecord {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;            // mean micro-batch loss in this step
  double grad_norm = 0.0;       // post-clip global norm
  double grad_norm_raw = 0.0;   // pre-clip global norm
};

template <class Task>
class Trainer {
 public:
  Trainer(GraderModel& model, Task& task, const TrainConfig& cfg)
      : model_(model),
        task_(task),
        cfg_(cfg),
        grads_(model.make_grads()),
        rng_(derive_seed(cfg.seed, 0xf00d)) {
    cfg_.validate();
    refs_ = model_.trainable_parameters();
    grad_refs_ = model_.grad_refs(grads_);
    if (refs_.size() != grad_refs_.size())
      throw errf("Trainer: parameter/gradient registries misaligned");
    adam_m_.resize(refs_.size());
    adam_v_.resize(refs_.size());
    for (std::size_t i = 0; i < refs_.size(); ++i) {
      adam_m_[i].assign(refs_[i].n, 0.0);
      adam_v_[i].assign(refs_[i].n, 0.0);
    }
    const long per_step = static_cast<long>(cfg_.micro_batch) * cfg_.grad_accum;
    steps_per_epoch_ = (static_cast<long>(task_.size()) + per_step - 1) / per_step;
    total_steps_ = steps_per_epoch_ * cfg_.epochs;
    if (cfg_.warmup_steps >= total_steps_ && cfg_.lr > 0)
      throw errf("Trainer: warmup_steps %d must be below total steps %ld",
                 cfg_.warmup_steps, total_steps_);
    epoch_start_rng_ = rng_.state();
  }

  long total_steps() const { return total_steps_; }
  long step() const { return step_; }
  const std::vector<StepRecord>& history() const { return history_; }

  // Runs until done, or for max_steps optimizer steps when non-negative.
  // Returns the records appended during this call.
  std::vector<StepRecord> run(long max_steps = -1) {
    std::vector<StepRecord> out;
    while (epoch_ < cfg_.epochs) {
      if (cursor_ == 0) {
        epoch_start_rng_ = rng_.state();
        reshuffle();
      }
      while (cursor_ < order_.size()) {
        if (max_steps >= 0 && static_cast<long>(out.size()) >= max_steps) return out;
        out.push_back(one_step());
      }
      ++epoch_;
      cursor_ = 0;
    }
    return out;
  }

  void save_state(Checkpoint& ck, const std::string& prefix = "") const {
    ck.set_meta(prefix + "trainer.step", std::to_string(step_));
    ck.set_meta(prefix + "trainer.epoch", std::to_string(epoch_));
    ck.set_meta(prefix + "trainer.cursor", std::to_string(cursor_));
    ck.set_meta(prefix + "trainer.total_steps", std::to_string(total_steps_));
    const auto rs = rng_.state();
    ck.add_u64(prefix + "trainer.rng", rs.data(), rs.size());
    ck.add_u64(prefix + "trainer.epoch_rng", epoch_start_rng_.data(),
               epoch_start_rng_.size());
    for (std::size_t i = 0; i < refs_.size(); ++i) {
      ck.add_f64(prefix + "adam_m." + refs_[i].name, adam_m_[i].data(), adam_m_[i].size());
      ck.add_f64(prefix + "adam_v." + refs_[i].name, adam_v_[i].data(), adam_v_[i].size());
    }
  }

  void load_state(const Checkpoint& ck, const std::string& prefix = "") {
    step_ = std::stol(ck.meta(prefix + "trainer.step"));
    epoch_ = static_cast<int>(std::stol(ck.meta(prefix + "trainer.epoch")));
    cursor_ = static_cast<std::size_t>(std::stoull(ck.meta(prefix + "trainer.cursor")));
    const long saved_total = std::stol(ck.meta(prefix + "trainer.total_steps"));
    if (saved_total != total_steps_)
      throw errf("Trainer resume: checkpoint ran %ld total steps, this run has %ld",
                 saved_total, total_steps_);
    std::array<std::uint64_t, 4> rs{}, ers{};
    ck.read_u64(prefix + "trainer.rng", rs.data(), rs.size());
    ck.read_u64(prefix + "trainer.epoch_rng", ers.data(), ers.size());
    rng_.set_state(rs);
    epoch_start_rng_ = ers;
    for (std::size_t i = 0; i < refs_.size(); ++i) {
      ck.read_f64(prefix + "adam_m." + refs_[i].name, adam_m_[i].data(), adam_m_[i].size());
      ck.read_f64(prefix + "adam_v." + refs_[i].name, adam_v_[i].data(), adam_v_[i].size());
    }
    // Rebuild the interrupted epoch's order from its seed snapshot.
    if (cursor_ > 0) {
      Rng replay(0);
      replay.set_state(epoch_start_rng_);
      order_.resize(task_.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
      replay.shuffle(order_);
    }
  }

 private:
  void reshuffle() {
    order_.resize(task_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  StepRecord one_step() {
    grads_.zero();
    const std::size_t group =
        static_cast<std::size_t>(cfg_.micro_batch) * static_cast<std::size_t>(cfg_.grad_accum);
    const std::size_t end = std::min(order_.size(), cursor_ + group);

    // How many micro-batches this group actually has (the last group of an
    // epoch may be short).
    std::size_t n_micro = 0;
    for (std::size_t s = cursor_; s < end; s += static_cast<std::size_t>(cfg_.micro_batch))
      ++n_micro;
    const double micro_weight = 1.0 / static_cast<double>(n_micro);

    double loss_sum = 0.0;
    for (std::size_t s = cursor_; s < end; s += static_cast<std::size_t>(cfg_.micro_batch)) {
      const std::size_t micro_end =
          std::min(end, s + static_cast<std::size_t>(cfg_.micro_batch));
      Batch batch;
      std::vector<GraderModel::Cache> caches(micro_end - s);
      for (std::size_t i = s; i < micro_end; ++i) {
        const ExampleRow row = task_.forward(order_[i], caches[i - s]);
        batch.predictions.push_back(row.pred);
        batch.targets.push_back(row.target);
        batch.masks.push_back(row.mask);
      }
      const double loss = masked_mse(batch);
      if (!std::isfinite(loss))
        throw errf("train: non-finite loss at optimizer step %ld", step_ + 1);
      loss_sum += loss;
      auto dpred = masked_mse_grad(batch);
      for (auto& row : dpred)
        for (auto& v : row) v *= micro_weight;
      for (std::size_t i = s; i < micro_end; ++i)
        task_.backward(order_[i], caches[i - s], dpred[i - s], grads_);
    }
    cursor_ = end;

    // Global-norm clip on the accumulated mean gradient.
    double sq = 0.0;
    for (std::size_t i = 0; i < grad_refs_.size(); ++i)
      for (std::size_t j = 0; j < grad_refs_[i].n; ++j)
        sq += grad_refs_[i].data[j] * grad_refs_[i].data[j];
    const double raw_norm = std::sqrt(sq);
    double clip_scale = 1.0;
    if (raw_norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / raw_norm;

    ++step_;
    const double lr = lr_at(step_, total_steps_, cfg_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < refs_.size(); ++i) {
      double* p = refs_[i].data;
      const double* g = grad_refs_[i].data;
      double* m = adam_m_[i].data();
      double* v = adam_v_[i].data();
      const bool decay = refs_[i].decay && cfg_.weight_decay > 0;
      for (std::size_t j = 0; j < refs_[i].n; ++j) {
        const double gj = g[j] * clip_scale;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
        if (decay) p[j] -= lr * cfg_.weight_decay * p[j];
      }
    }

    StepRecord rec;
    rec.step = step_;
    rec.lr = lr;
    rec.loss = loss_sum * micro_weight;
    rec.grad_norm_raw = raw_norm;
    rec.grad_norm = raw_norm * clip_scale;
    history_.push_back(rec);
    return rec;
  }

  GraderModel& model_;
  Task& task_;
  TrainConfig cfg_;
  GraderGrads grads_;
  std::vector<GraderModel::ParamRef> refs_;
  std::vector<GraderModel::ParamRef> grad_refs_;
  std::vector<std::vector<double>> adam_m_, adam_v_;
  Rng rng_;
  std::array<std::uint64_t, 4> epoch_start_rng_{};
  std::vector<std::size_t> order_;
  long step_ = 0;
  int epoch_ = 0;
  std::size_t cursor_ = 0;
  long steps_per_epoch_ = 0;
  long total_steps_ = 0;
  std::vector<StepRecord> history_;
};

inline void write_history_csv(const std::vector<StepRecord>& history,
                              const std::filesystem::path& path) {
  std::string out = "step,lr,loss,grad_norm\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g\n", r.step, r.lr,
                  r.loss, r.grad_norm);
    out += buf;
  }
  write_file(path, out);
}

}  // namespace slg
