#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slg/backbone.hpp"
#include "slg/checkpoint.hpp"
#include "slg/common.hpp"
#include "slg/corpus.hpp"
#include "slg/corpus_io.hpp"
#include "slg/eval.hpp"
#include "slg/scale.hpp"
#include "slg/speechprior.hpp"
#include "slg/train.hpp"

namespace slg::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Checkpoint loading into a ready-to-run grader
// ---------------------------------------------------------------------------

struct LoadedGrader {
  std::string kind;
  std::optional<FrozenEncoder> encoder;
  std::optional<GraderModel> model;
  std::vector<GraderModel> stg_models;
  std::optional<AppBundle> app;
  std::unique_ptr<Grader> grader;
};

inline std::unique_ptr<LoadedGrader> load_grader(const fs::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  auto out = std::make_unique<LoadedGrader>();
  out->kind = ck.meta("kind");
  if (out->kind == "app_only") {
    out->app = load_app_bundle(ck, "app_bundle.");
    out->grader = std::make_unique<AppGrader>(*out->app);
    return out;
  }
  out->encoder = load_encoder(ck);
  if (out->kind == "mtl" || out->kind == "mtl_app") {
    out->model = load_model(ck);
    if (out->kind == "mtl_app") out->app = load_app_bundle(ck, "app_bundle.");
    out->grader = std::make_unique<MtlGrader>(*out->model, *out->encoder,
                                              out->app ? &*out->app : nullptr);
  } else if (out->kind == "ctg") {
    out->model = load_model(ck);
    out->grader = std::make_unique<CtgGrader>(*out->model, *out->encoder);
  } else if (out->kind == "stg") {
    out->stg_models.reserve(kNumParts);
    for (PartId p : kParts)
      out->stg_models.push_back(
          load_model(ck, std::string(part_name(p)) + "."));
    std::array<const GraderModel*, kNumParts> ptrs{};
    for (int p = 0; p < kNumParts; ++p)
      ptrs[static_cast<std::size_t>(p)] = &out->stg_models[static_cast<std::size_t>(p)];
    out->grader = std::make_unique<StgGrader>(ptrs, *out->encoder);
  } else {
    throw errf("unknown checkpoint kind '%s' in %s", out->kind.c_str(),
               path.string().c_str());
  }
  return out;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::uint64_t seed = 7;
  int n_train = 512, n_dev = 64, n_eval = 128;
  double p_drop = 0.0;
  bool force = false;
  GenConfig cfg;
};

inline void cmd_gen(const GenArgs& a) {
  const fs::path out(a.out);
  if (fs::exists(out) && !fs::is_empty(out) && !a.force)
    throw errf("output directory %s exists and is not empty (use --force to overwrite)",
               a.out.c_str());
  a.cfg.validate();
  if (a.p_drop < 0.0 || a.p_drop >= 1.0)
    throw errf("--p-drop must be in [0, 1)");

  struct Split {
    const char* name;
    const char* prefix;
    int n;
  };
  const Split splits[3] = {{"train", "trn", a.n_train},
                           {"dev", "dev", a.n_dev},
                           {"eval", "evl", a.n_eval}};
  const NoiseFloor floor = noise_floor(a.cfg);
  std::printf("noise floor (from label sigma %.3g): per-part rmse %.4f, overall rmse %.4f\n",
              a.cfg.label_noise, floor.per_part, floor.overall);
  for (int si = 0; si < 3; ++si) {
    GenConfig cfg = a.cfg;
    cfg.id_prefix = splits[si].prefix;
    auto sessions = generate_corpus(splits[si].n,
                                    derive_seed(a.seed, static_cast<std::uint64_t>(si)),
                                    cfg);
    if (si == 0 && a.p_drop > 0.0)
      apply_label_dropout(sessions, a.p_drop, derive_seed(a.seed, 99));
    const fs::path dir = out / splits[si].name;
    fs::create_directories(dir);
    write_corpus(sessions, dir);
    const auto st = label_stats(sessions);
    std::printf("%s: %d sessions, hash %s\n", splits[si].name, st.n_sessions,
                corpus_hash(dir).c_str());
    static const char* names[5] = {"p1", "p3", "p4", "p5", "overall"};
    for (int k = 0; k < 5; ++k)
      std::printf("  %-7s n=%-4d mean=%.4f std=%.4f\n", names[k],
                  st.n_labeled[static_cast<std::size_t>(k)],
                  st.mean[static_cast<std::size_t>(k)],
                  st.stddev[static_cast<std::size_t>(k)]);
  }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string mode;
  std::string data;
  std::string split = "train";
  std::string out;
  std::string history;
  std::string resume;
  long max_steps = -1;
  std::uint64_t seed = 1;
  TrainConfig tcfg;
  ModelConfig mcfg;
  EncoderConfig ecfg;
  int app_epochs = 8;
  int app_hidden = 64;
};

inline std::vector<Session> load_split(const std::string& data,
                                       const std::string& split) {
  const fs::path dir = fs::path(data) / split;
  if (!fs::exists(dir / "manifest.jsonl"))
    throw errf("missing corpus split: %s (no manifest.jsonl)", dir.string().c_str());
  return read_corpus(dir);
}

inline void check_feature_dims(const std::vector<Session>& sessions,
                               const EncoderConfig& ecfg) {
  for (const auto& s : sessions)
    for (const auto& r : s.responses)
      if (static_cast<int>(r.features.d_feat) != ecfg.d_feat)
        throw errf("dimension mismatch between checkpoint and corpus: corpus d_feat=%u, encoder expects %d",
                   r.features.d_feat, ecfg.d_feat);
}

inline void cmd_train(TrainArgs a) {
  if (a.out.empty()) throw errf("--out checkpoint path is required");
  if (a.history.empty()) a.history = a.out + ".history.csv";
  auto corpus = load_split(a.data, a.split);
  if (corpus.empty()) throw errf("corpus split %s is empty", a.split.c_str());
  a.ecfg.d_feat = static_cast<int>(corpus.front().responses.front().features.d_feat);
  a.mcfg.d_w = a.ecfg.d_w;
  a.tcfg.seed = a.seed;
  a.mcfg.seed = derive_seed(a.seed, 0xa11);
  const std::string train_hash = corpus_hash(fs::path(a.data) / a.split);

  Checkpoint ck;
  ck.set_meta("kind", a.mode);
  ck.set_meta("train_corpus_hash", train_hash);
  ck.set_meta("train_seed", std::to_string(a.seed));
  std::vector<StepRecord> history;

  if (a.mode == "app_only") {
    if (!a.resume.empty()) throw errf("--resume is not supported for app_only");
    const AppBundle bundle =
        app_pretrain(corpus, std::nullopt, a.app_epochs,
                     derive_seed(a.seed, 0xa99), a.ecfg, a.app_hidden);
    save_app_bundle(ck, bundle, "app_bundle.");
    ck.save(a.out);
    write_history_csv(history, a.history);
    std::printf("app_only checkpoint written to %s\n", a.out.c_str());
    return;
  }

  FrozenEncoder encoder(a.ecfg);
  check_feature_dims(corpus, a.ecfg);

  auto finish = [&](GraderModel& model, auto& trainer) {
    save_model(ck, model);
    save_encoder(ck, encoder);
    trainer.save_state(ck);
    ck.save(a.out);
    write_history_csv(trainer.history(), a.history);
    const double last = trainer.history().empty() ? 0.0 : trainer.history().back().loss;
    std::printf("%s checkpoint written to %s (%ld steps, final loss %.6f)\n",
                a.mode.c_str(), a.out.c_str(), trainer.step(), last);
  };

  if (a.mode == "mtl" || a.mode == "mtl_app") {
    std::optional<AppBundle> app;
    if (a.mode == "mtl_app") {
      app = app_pretrain(corpus, std::nullopt, a.app_epochs,
                         derive_seed(a.seed, 0xa99), a.ecfg, a.app_hidden);
      save_app_bundle(ck, *app, "app_bundle.");
    }
    GraderModel model(a.mcfg);
    if (!a.resume.empty()) {
      const Checkpoint prev = Checkpoint::load(a.resume);
      if (prev.meta("kind") != a.mode)
        throw errf("resume checkpoint kind '%s' does not match --mode %s",
                   prev.meta("kind").c_str(), a.mode.c_str());
      model = load_model(prev);
      SessionTask task(model, encoder, corpus, app ? &*app : nullptr);
      Trainer<SessionTask> trainer(model, task, a.tcfg);
      trainer.load_state(prev);
      trainer.run(a.max_steps);
      finish(model, trainer);
      return;
    }
    SessionTask task(model, encoder, corpus, app ? &*app : nullptr);
    Trainer<SessionTask> trainer(model, task, a.tcfg);
    trainer.run(a.max_steps);
    finish(model, trainer);
    return;
  }

  if (a.mode == "ctg") {
    ModelConfig cfg = response_model_config(a.mcfg);
    GraderModel model(cfg);
    ResponseTask task(model, encoder, corpus, std::nullopt);
    Trainer<ResponseTask> trainer(model, task, a.tcfg);
    if (!a.resume.empty()) {
      const Checkpoint prev = Checkpoint::load(a.resume);
      if (prev.meta("kind") != "ctg")
        throw errf("resume checkpoint kind '%s' does not match --mode ctg",
                   prev.meta("kind").c_str());
      model = load_model(prev);
      trainer.load_state(prev);
    }
    trainer.run(a.max_steps);
    finish(model, trainer);
    return;
  }

  if (a.mode == "stg") {
    if (!a.resume.empty()) throw errf("--resume is not supported for stg");
    auto members = train_stg(corpus, a.mcfg, encoder, a.tcfg);
    for (int p = 0; p < kNumParts; ++p) {
      save_model(ck, *members[static_cast<std::size_t>(p)].model,
                 std::string(part_name(static_cast<PartId>(p))) + ".");
      for (const auto& rec : members[static_cast<std::size_t>(p)].history)
        history.push_back(rec);
    }
    save_encoder(ck, encoder);
    ck.save(a.out);
    write_history_csv(history, a.history);
    std::printf("stg checkpoint written to %s\n", a.out.c_str());
    return;
  }

  throw errf("unknown --mode '%s' (expected mtl, mtl_app, ctg, stg, app_only)",
             a.mode.c_str());
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "eval";
  std::string overall_mode = "part-mean";
  std::string out;
};

inline std::vector<OverallMode> parse_overall_modes(const std::string& s) {
  if (s == "ori") return {OverallMode::OriHead};
  if (s == "part-mean") return {OverallMode::PartMean};
  if (s == "both") return {OverallMode::PartMean, OverallMode::OriHead};
  throw errf("unknown --overall-mode '%s' (expected ori, part-mean, both)", s.c_str());
}

inline void write_predictions_csv(const std::vector<Session>& sessions,
                                  const std::vector<Prediction>& preds,
                                  const fs::path& path) {
  std::string out =
      "session_id,p1,p3,p4,p5,ori_overall,part_mean_overall,"
      "gold_p1,gold_p3,gold_p4,gold_p5,gold_overall,"
      "mask_p1,mask_p3,mask_p4,mask_p5,mask_overall\n";
  char buf[512];
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& s = sessions[i];
    const auto& p = preds[i];
    std::snprintf(buf, sizeof(buf),
                  "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%d,%d,%d\n",
                  s.session_id.c_str(), p.p1, p.p3, p.p4, p.p5, p.ori_overall,
                  p.part_mean_overall, s.labels.p1, s.labels.p3, s.labels.p4,
                  s.labels.p5, s.labels.overall, s.mask.m[0] ? 1 : 0,
                  s.mask.m[1] ? 1 : 0, s.mask.m[2] ? 1 : 0, s.mask.m[3] ? 1 : 0,
                  s.mask.m[4] ? 1 : 0);
    out += buf;
  }
  write_file(path, out);
}

inline void cmd_eval(const EvalArgs& a) {
  if (a.out.empty()) throw errf("--out report prefix is required");
  auto loaded = load_grader(a.ckpt);
  const auto sessions = load_split(a.data, a.split);
  if (loaded->encoder)
    check_feature_dims(sessions, loaded->encoder->config());
  else if (loaded->app)
    check_feature_dims(sessions, loaded->app->enc_cfg);
  const std::string hash = corpus_hash(fs::path(a.data) / a.split);

  std::vector<Prediction> preds;
  const EvalReport rep = evaluate(*loaded->grader, sessions,
                                  parse_overall_modes(a.overall_mode), hash, &preds);
  write_file(a.out + ".json", report_to_json(rep).dump(2) + "\n");
  write_file(a.out + ".txt", report_to_text(rep));
  write_predictions_csv(sessions, preds, a.out + ".predictions.csv");
  std::printf("%s", report_to_text(rep).c_str());
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareArgs {
  std::vector<std::string> reports;
  std::string out;
};

inline std::string comparison_table(const std::vector<EvalReport>& reports) {
  for (std::size_t i = 1; i < reports.size(); ++i)
    if (reports[i].corpus_hash != reports[0].corpus_hash)
      throw errf("refusing to compare reports from different corpora: %s (%s) vs %s (%s)",
                 reports[0].model_tag.c_str(), reports[0].corpus_hash.c_str(),
                 reports[i].model_tag.c_str(), reports[i].corpus_hash.c_str());
  std::vector<const EvalReport*> order;
  for (const auto& r : reports) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const EvalReport* x, const EvalReport* y) {
    const double rx = x->primary_overall().cell.rmse;
    const double ry = y->primary_overall().cell.rmse;
    if (rx != ry) return rx < ry;
    return x->model_tag < y->model_tag;
  });
  std::string out = "Arch  Model      RMSE     PCC      %<=0.5   %<=1.0\n";
  char buf[160];
  for (const auto* r : order) {
    const auto& row = r->primary_overall();
    if (row.cell.pcc)
      std::snprintf(buf, sizeof(buf), "%-5s %-10s %-8.4f %-8.4f %-8.1f %-8.1f\n",
                    r->arch.c_str(), r->model_tag.c_str(), row.cell.rmse,
                    *row.cell.pcc, row.acc_05, row.acc_10);
    else
      std::snprintf(buf, sizeof(buf), "%-5s %-10s %-8.4f undef    %-8.1f %-8.1f\n",
                    r->arch.c_str(), r->model_tag.c_str(), row.cell.rmse,
                    row.acc_05, row.acc_10);
    out += buf;
  }
  return out;
}

inline void cmd_compare(const CompareArgs& a) {
  if (a.reports.size() < 2) throw errf("compare needs at least two report files");
  std::vector<EvalReport> reports;
  for (const auto& path : a.reports) {
    const auto j = nlohmann::ordered_json::parse(read_file(path));
    reports.push_back(report_from_json(j));
  }
  const std::string table = comparison_table(reports);
  if (!a.out.empty()) write_file(a.out, table);
  std::printf("%s", table.c_str());
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct PlotArgs {
  std::string ckpt_a, ckpt_b;
  std::string data;
  std::string split = "eval";
  std::string out;
  std::string svg;
};

inline void write_scatter_svg(const fs::path& csv_path, const fs::path& svg_path) {
  const std::string csv = read_file(csv_path);
  std::string svg =
      "<svg xmlns='http://www.w3.org/2000/svg' width='480' height='480' "
      "viewBox='0 0 480 480'>\n"
      "<rect width='480' height='480' fill='white'/>\n"
      "<line x1='40' y1='440' x2='440' y2='440' stroke='black'/>\n"
      "<line x1='40' y1='40' x2='40' y2='440' stroke='black'/>\n"
      "<line x1='40' y1='440' x2='440' y2='40' stroke='#bbbbbb' stroke-dasharray='4'/>\n";
  std::size_t pos = 0;
  int line_no = 0;
  char buf[160];
  auto coord = [](double v) { return 40.0 + (v - 2.0) / 3.5 * 400.0; };
  while (pos < csv.size()) {
    std::size_t nl = csv.find('\n', pos);
    if (nl == std::string::npos) nl = csv.size();
    const std::string line = csv.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line_no <= 2 || line.empty()) continue;  // comment + header
    double a = 0, b = 0;
    const std::size_t c1 = line.find(',');
    if (c1 == std::string::npos) continue;
    std::sscanf(line.c_str() + c1 + 1, "%lf,%lf", &a, &b);
    std::snprintf(buf, sizeof(buf),
                  "<circle cx='%.1f' cy='%.1f' r='3' fill='steelblue' fill-opacity='0.6'/>\n",
                  coord(a), 480.0 - coord(b));
    svg += buf;
  }
  svg += "</svg>\n";
  write_file(svg_path, svg);
}

inline void cmd_plot(const PlotArgs& a) {
  if (a.out.empty()) throw errf("--out csv path is required");
  auto ga = load_grader(a.ckpt_a);
  auto gb = load_grader(a.ckpt_b);
  const auto sessions = load_split(a.data, a.split);
  const auto result = export_scatter(*ga->grader, *gb->grader, sessions, a.out);
  if (!a.svg.empty()) write_scatter_svg(a.out, a.svg);
  std::printf("scatter written to %s (%d sessions, inter-model pcc %.6f)\n",
              a.out.c_str(), result.n_rows, result.inter_model_pcc);
}

// ---------------------------------------------------------------------------
// argument wiring
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args) {
  CLI::App app{"slgrade: session-level speaking-score grader"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from an INI file");

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus (train/dev/eval splits)");
  gen->add_option("--out", gen_args.out, "output directory")->required();
  gen->add_option("--seed", gen_args.seed, "master seed (default 7)");
  gen->add_option("--n-train", gen_args.n_train, "train sessions (default 512)");
  gen->add_option("--n-dev", gen_args.n_dev, "dev sessions (default 64)");
  gen->add_option("--n-eval", gen_args.n_eval, "eval sessions (default 128)");
  gen->add_option("--p-drop", gen_args.p_drop,
                  "per-part label dropout probability, train split only (default 0)");
  gen->add_flag("--force", gen_args.force, "overwrite an existing non-empty directory");
  gen->add_option("--d-feat", gen_args.cfg.d_feat, "feature channels (default 16)");
  gen->add_option("--label-noise", gen_args.cfg.label_noise,
                  "sigma of part-score noise before banding (default 0.25)");
  gen->add_option("--response-jitter", gen_args.cfg.response_jitter,
                  "sigma of per-response delivery offset (default 0.12)");
  gen->add_option("--frame-noise", gen_args.cfg.frame_noise,
                  "per-frame channel noise (default 0.25)");
  gen->add_option("--consistency-gain", gen_args.cfg.consistency_gain,
                  "P1/P5 label shift per unit delivery spread (default 0.8)");
  gen->add_option("--time-scale", gen_args.cfg.time_scale,
                  "compression of nominal task timing (default 0.1)");
  gen->add_option("--duration-pull", gen_args.cfg.duration_theta_pull,
                  "how strongly response length tracks proficiency (default 0.6)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a grader");
  train->add_option("--mode", train_args.mode, "mtl | mtl_app | ctg | stg | app_only")
      ->required();
  train->add_option("--data", train_args.data, "corpus directory from gen")->required();
  train->add_option("--split", train_args.split, "corpus split (default train)");
  train->add_option("--out", train_args.out, "checkpoint output path")->required();
  train->add_option("--history", train_args.history,
                    "loss history csv (default <out>.history.csv)");
  train->add_option("--resume", train_args.resume, "resume from checkpoint");
  train->add_option("--max-steps", train_args.max_steps,
                    "stop after this many optimizer steps (for resume workflows)");
  train->add_option("--seed", train_args.seed, "training seed (default 1)");
  train->add_option("--lr", train_args.tcfg.lr, "peak learning rate (default 1e-4)");
  train->add_option("--weight-decay", train_args.tcfg.weight_decay,
                    "decoupled weight decay (default 0.01)");
  train->add_option("--warmup", train_args.tcfg.warmup_steps,
                    "linear warmup steps (default 100)");
  train->add_option("--clip", train_args.tcfg.clip_norm,
                    "global gradient-norm clip (default 1.0)");
  train->add_option("--micro-batch", train_args.tcfg.micro_batch,
                    "sessions per micro batch (default 1)");
  train->add_option("--grad-accum", train_args.tcfg.grad_accum,
                    "micro batches per optimizer step (default 8)");
  train->add_option("--epochs", train_args.tcfg.epochs, "training epochs (default 3)");
  train->add_option("--d-model", train_args.mcfg.d_model, "model width (default 64)");
  train->add_option("--layers", train_args.mcfg.n_layers, "transformer layers (default 2)");
  train->add_option("--heads", train_args.mcfg.n_heads, "attention heads (default 4)");
  train->add_option("--d-ff", train_args.mcfg.d_ff, "mlp width (default 4*d_model)");
  train->add_option("--rank", train_args.mcfg.lora_rank, "low-rank adapter rank (default 4)");
  train->add_option("--alpha", train_args.mcfg.lora_alpha, "adapter scale alpha (default 8)");
  train->add_option("--stride", train_args.mcfg.audio_stride,
                    "audio frame stride into the sequence (default 4)");
  train->add_option("--max-context", train_args.mcfg.max_context,
                    "sequence length limit (default 4096)");
  train->add_flag("--causal", train_args.mcfg.causal,
                  "causal attention instead of bidirectional");
  train->add_option("--pe-scale", train_args.mcfg.pe_scale,
                    "positional encoding scale (default 0.5)");
  train->add_option("--d-w", train_args.ecfg.d_w, "frozen encoder width (default 32)");
  train->add_option("--enc-seed", train_args.ecfg.seed, "frozen encoder seed");
  train->add_option("--app-epochs", train_args.app_epochs,
                    "prior pre-training epochs (default 8)");
  train->add_option("--app-hidden", train_args.app_hidden,
                    "prior MLP hidden width (default 64)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval_args.data, "corpus directory")->required();
  eval_cmd->add_option("--split", eval_args.split, "corpus split (default eval)");
  eval_cmd->add_option("--overall-mode", eval_args.overall_mode,
                       "ori | part-mean | both (default part-mean)");
  eval_cmd->add_option("--out", eval_args.out,
                       "report prefix; writes <out>.json, <out>.txt, <out>.predictions.csv")
      ->required();

  CompareArgs compare_args;
  auto* compare = app.add_subcommand("compare", "merge eval reports into one table");
  compare->add_option("reports", compare_args.reports, "report .json files")
      ->required()
      ->expected(-2);
  compare->add_option("--out", compare_args.out, "write the table to a file");

  PlotArgs plot_args;
  auto* plot = app.add_subcommand("plot", "scatter data for two checkpoints");
  plot->add_option("--ckpt-a", plot_args.ckpt_a, "first checkpoint")->required();
  plot->add_option("--ckpt-b", plot_args.ckpt_b, "second checkpoint")->required();
  plot->add_option("--data", plot_args.data, "corpus directory")->required();
  plot->add_option("--split", plot_args.split, "corpus split (default eval)");
  plot->add_option("--out", plot_args.out, "scatter csv path")->required();
  plot->add_option("--svg", plot_args.svg, "also render a simple svg scatter");

  std::vector<const char*> argv;
  argv.push_back("slgrade");
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) cmd_gen(gen_args);
    if (*train) cmd_train(train_args);
    if (*eval_cmd) cmd_eval(eval_args);
    if (*compare) cmd_compare(compare_args);
    if (*plot) cmd_plot(plot_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace slg::cli
