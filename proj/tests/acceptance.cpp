// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "cli_harness.hpp"
#include "json.hpp"
#include "metric_fixtures.hpp"
#include "rsalign/config.hpp"
#include "rsalign/dual_encoder.hpp"
#include "rsalign/expert_layer.hpp"
#include "rsalign/model.hpp"
#include "rsalign/pipeline.hpp"
#include "rsalign/prompter.hpp"
#include "rsalign/rng.hpp"
#include "rsalign/semantic_db.hpp"
#include "rsalign/synthetic.hpp"

using namespace rsalign;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1 ------------------------------------------------------------------

Outcome parameter_arithmetic() {
  const ModelConfig m = RunConfig::from_profile("paper").model;
  const std::uint64_t expert = low_rank_expert_params(m.hidden, m.expert_rank);
  const std::uint64_t baseline = gated_ffn_expert_params(m.hidden, m.inner());
  // The built parameter struct agrees with the closed form (one small layer).
  Rng rng(1);
  ExpertLayerConfig small{16, 4, 32, 3};
  const auto layer = ExpertLayerParams::init(small, rng);
  const bool struct_ok = layer.experts[0].parameter_count() == low_rank_expert_params(16, 4);
  const double percent = 100.0 * static_cast<double>(expert) / static_cast<double>(baseline);
  const bool ok = expert == 3670016 && baseline == 203685888 && struct_ok &&
                  std::round(percent * 10.0) / 10.0 == 1.8;
  return {ok, fmt("per-expert %llu, baseline expert %llu, ratio %.3f%%",
                  static_cast<unsigned long long>(expert),
                  static_cast<unsigned long long>(baseline), percent)};
}

// ---- 2 ------------------------------------------------------------------

std::size_t prompt_rows(std::size_t n_a, std::size_t levels, std::size_t dim, std::uint64_t seed) {
  PrompterConfig pc;
  pc.num_agg_tokens = n_a;
  pc.dim = dim;
  pc.heads = 2;
  pc.level_dims.assign(levels, dim / 2);
  Rng rng(seed);
  const PrompterParams params = PrompterParams::init(pc, rng);
  ad::Tape tape(false);
  std::vector<ad::Var> vis;
  for (std::size_t l = 0; l < levels; ++l) vis.push_back(tape.constant(random_normal(5 + l, dim / 2, 1.0, rng)));
  const ad::Var out = build_prompt(tape, pc, params, tape.constant(random_normal(3, dim, 1.0, rng)),
                                   tape.constant(random_normal(7, dim, 1.0, rng)), vis);
  return out.value().cols() == dim ? out.value().rows() : 0;
}

Outcome shape_contract() {
  const ModelConfig paper = RunConfig::from_profile("paper").model;
  // Profile token counts at narrow widths; the row count does not depend on width.
  const std::size_t rows = prompt_rows(paper.num_agg_tokens, paper.num_levels, 8, 2);
  bool ok = rows == 432 && paper.prompter().output_rows() == 432;
  std::size_t cases = 0;
  for (std::size_t n_a : {1, 2, 4, 7})
    for (std::size_t l : {1, 2, 3, 4}) {
      ok &= prompt_rows(n_a, l, 8, 10 * n_a + l) == n_a * l;
      ++cases;
    }
  return {ok, fmt("paper N_a=%zu L=%zu gives %zu rows; %zu toy (N_a, L) pairs give N_a*L", paper.num_agg_tokens,
                  paper.num_levels, rows, cases)};
}

// ---- 3 ------------------------------------------------------------------

Outcome gradient_suite() {
  RunConfig c = RunConfig::from_profile("toy");
  ModelConfig& m = c.model;
  m.patch_dim = 4;
  m.visual_dim = 8;
  m.hidden = 16;
  m.expert_rank = 4;
  m.num_levels = 2;
  m.num_agg_tokens = 2;
  m.lm_blocks = 2;
  m.vocab = 11;
  m.max_positions = 32;
  c.retrieval.embed_dim = 8;
  c.retrieval.vocab = 64;
  const json r = pipeline::grad_check(c, 4);

  // Every component named in the criterion holds parameters in the probed set.
  Model model(m, 0);
  std::vector<std::string> names;
  for (const auto& p : model.params().collect_all()) names.push_back(p.name);
  bool covered = true;
  for (const char* part : {"prompter.", ".expert.", ".gate", "ffn", "visual.", "lm.embed"}) {
    covered &= std::any_of(names.begin(), names.end(),
                           [&](const std::string& n) { return n.find(part) != std::string::npos; });
  }
  const double err = r["max_relative_error"].get<double>();
  const std::size_t probes = r["probes"].get<std::size_t>();
  return {covered && probes >= 200 && err < 1e-4 && r["retriever"]["probes"].get<std::size_t>() > 0,
          fmt("%zu probes, max relative error %.2e (worst %s)", probes, err,
              r["model"]["worst_parameter"].get<std::string>().c_str())};
}

// ---- 4 ------------------------------------------------------------------

Outcome router_invariants() {
  Rng rng(4);
  std::size_t perturbed = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t levels = 1 + rng.below(4);
    std::vector<Segment> segs;
    const auto push = [&](Segment s, std::size_t n) { segs.insert(segs.end(), n, s); };
    push(Segment::image(), rng.below(4));
    for (std::uint32_t l = 0; l < levels; ++l) push(Segment::semantic(l), rng.below(4));
    push(Segment::query(), rng.below(4));
    if (segs.empty()) push(Segment::query(), 1);

    // Partition: image and query rows reach every expert, a level-l
    // semantic row reaches expert l only.
    std::vector<RouteMask> masks;
    for (std::size_t l = 0; l < levels; ++l) masks.push_back(build_mask(segs, l, levels));
    for (std::size_t t = 0; t < segs.size(); ++t) {
      std::size_t owners = 0;
      for (std::size_t l = 0; l < levels; ++l) {
        const bool expected = segs[t].kind != SegmentKind::kSemantic || segs[t].level == l;
        if (masks[l].bits[t] != (expected ? 1 : 0)) return {false, fmt("mask mismatch, case %d", trial)};
        owners += masks[l].bits[t];
      }
      const std::size_t want = segs[t].kind == SegmentKind::kSemantic ? 1 : levels;
      if (owners != want) return {false, fmt("partition violated, case %d", trial)};
    }

    // Perturbing Semantic(j) rows leaves the other experts bit-identical.
    const std::size_t d = 6;
    Rng prng(trial);
    ExpertLayerParams p = ExpertLayerParams::init({d, 2, 12, levels}, prng);
    for (auto& e : p.experts) e.up = random_normal(2, d, 0.5, prng);
    p.gate = random_normal(d, levels, 0.5, prng);
    SegmentedTokens x{random_normal(segs.size(), d, 1.0, prng), segs};
    const auto base = expert_block_trace(p, x);
    const std::uint32_t j = static_cast<std::uint32_t>(prng.below(levels));
    SegmentedTokens y = x;
    bool touched = false;
    for (std::size_t t = 0; t < segs.size(); ++t) {
      if (segs[t] == Segment::semantic(j)) {
        for (auto& v : y.hidden.row(t)) v += 1.0 + prng.normal();
        touched = true;
      }
    }
    const auto moved = expert_block_trace(p, y);
    for (std::size_t i = 0; i < levels; ++i) {
      if (i != j && !(base.expert_outputs[i] == moved.expert_outputs[i])) {
        return {false, fmt("expert %zu changed under Semantic(%u) perturbation, case %d", i, j, trial)};
      }
    }
    perturbed += touched ? 1 : 0;
  }
  return {perturbed > 0, fmt("1000 layouts, %zu with a perturbed semantic level", perturbed)};
}

// ---- 5 ------------------------------------------------------------------

std::vector<RetrievalResult> sort_oracle(const SemanticDatabase& db, const std::vector<double>& q,
                                         std::size_t k) {
  double qq = 0.0;
  for (double v : q) qq += v * v;
  std::vector<RetrievalResult> all;
  for (const auto& rec : db.records()) {
    double dot = 0.0, ee = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * rec.embedding[i];
    for (double v : rec.embedding) ee += v * v;
    all.push_back({rec.id, std::clamp(dot / (std::sqrt(qq) * std::sqrt(ee)), -1.0, 1.0)});
  }
  std::sort(all.begin(), all.end(), [](const RetrievalResult& a, const RetrievalResult& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

Outcome retrieval_oracle() {
  Rng rng(5);
  const std::uint32_t dim = 16;
  SemanticDatabase db(dim);
  std::vector<std::vector<double>> kept;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> e(dim);
    // Every fifth record repeats an earlier embedding (scaled) to force ties.
    if (i % 5 == 4) {
      e = kept[rng.below(kept.size())];
      for (auto& v : e) v *= 2.0;
    } else {
      for (auto& v : e) v = rng.normal();
    }
    kept.push_back(e);
    db.ingest("r" + std::to_string(i), e);
  }
  std::size_t queries = 0, ties = 0;
  for (int t = 0; t < 60; ++t) {
    std::vector<double> q(dim);
    if (t % 2 == 0) {
      q = kept[rng.below(kept.size())];
    } else {
      for (auto& v : q) v = rng.normal();
    }
    for (std::size_t k : {1, 5, 32}) {
      const auto got = db.retrieve_top_k(q, k);
      const auto want = sort_oracle(db, q, k);
      if (got != want) return {false, fmt("mismatch at query %d, k=%zu", t, k)};
      for (std::size_t i = 1; i < got.size(); ++i) ties += got[i].score == got[i - 1].score;
      ++queries;
    }
  }
  return {ties > 0, fmt("%zu queries over 1000 records, %zu tied neighbours resolved", queries, ties)};
}

// ---- 6 ------------------------------------------------------------------

Outcome contrastive_efficacy() {
  const DualEncoderDims dims{16, 32, 4096};
  const auto corpus = synthetic::retrieval_corpus(32, dims.image_dim, 21);
  const auto pairs = synthetic::to_pairs(corpus, dims.vocab);
  RetrieverTrainOptions opts;
  opts.seed = 7;
  const double before = retrieval_recall_at_1(DualEncoderParams::init(dims, opts.seed), pairs);
  const double after = retrieval_recall_at_1(train_retriever(pairs, dims, opts), pairs);
  return {before <= 0.2 && after >= 0.9, fmt("recall@1 %.3f before, %.3f after", before, after)};
}

// ---- 7 ------------------------------------------------------------------

Outcome overfit_sanity() {
  const RunConfig c = RunConfig::from_profile("toy");
  auto samples = synthetic::to_samples(c.model, synthetic::instruction_corpus(16, 4, c.model.patch_dim, 3));
  Model model(c.model, 7);
  const TrainOptions opts = c.train_options(TrainStage::kInstruction);
  const TrainLog log = train(model, samples, opts);
  std::size_t exact = 0;
  for (const auto& s : samples) exact += model.generate(s.patches, s.query, s.semantics, 32) == s.response;
  const bool ok = log.final_loss < 0.1 && log.steps_run <= 2000 && exact * 10 >= samples.size() * 9;
  return {ok, fmt("loss %.4f after %zu steps, %zu/%zu responses exact", log.final_loss, log.steps_run, exact,
                  samples.size())};
}

// ---- 8 ------------------------------------------------------------------

Outcome metric_kernels() {
  double worst = 0.0;
  std::size_t checks = 0;
  for (const auto& cc : fixtures::caption_cases()) {
    const auto pair = fixtures::to_pair(cc);
    for (auto [got, want] : {std::pair{metrics::bleu1(pair), cc.bleu1}, std::pair{metrics::rouge1(pair), cc.rouge1},
                             std::pair{metrics::meteor_simplified(pair), cc.meteor}}) {
      worst = std::max(worst, std::abs(got - want));
      ++checks;
    }
  }
  for (const auto& bc : fixtures::box_cases()) {
    worst = std::max(worst, std::abs(metrics::iou(bc.a, bc.b) - bc.iou));
    ++checks;
  }
  return {worst <= 1e-12, fmt("%zu fixture values, max deviation %.1e", checks, worst)};
}

// ---- 9 ------------------------------------------------------------------

Outcome determinism() {
  using cli_harness::run;
  using cli_harness::slurp;
  const std::string cli = RSALIGN_CLI_PATH;
  cli_harness::Workdir dir("acceptance_det");
  cli_harness::spit(dir.file("cfg.json"),
                    R"({"seed": 11, "stage1": {"steps": 20}, "stage2": {"steps": 20, "target_loss": null},
                        "retrieval": {"epochs": 60}})");
  const std::string cfg = "--config " + dir.file("cfg.json") + " ";
  std::vector<std::pair<std::string, std::vector<std::string>>> commands;  // args, artifacts
  auto f = [&](const std::string& tag, const std::string& name) { return dir.file(tag + "_" + name); };
  std::vector<std::string> names;
  for (const char* tag : {"a", "b"}) {
    const std::string t = tag;
    commands.push_back({"synth --kind retrieval --count 24 --out " + f(t, "pairs.jsonl"), {f(t, "pairs.jsonl")}});
    commands.push_back({"synth --kind texts --count 24 --out " + f(t, "texts.jsonl"), {f(t, "texts.jsonl")}});
    commands.push_back({"synth --kind caption --count 8 --out " + f(t, "cap.jsonl"), {f(t, "cap.jsonl")}});
    commands.push_back({"synth --kind instruction --count 8 --out " + f(t, "ins.jsonl"), {f(t, "ins.jsonl")}});
    commands.push_back({"train-retriever --input " + f(t, "pairs.jsonl") + " --out " + f(t, "r.rsde"), {f(t, "r.rsde")}});
    commands.push_back({"build-db --input " + f(t, "texts.jsonl") + " --retriever " + f(t, "r.rsde") + " --out " +
                            f(t, "d.rsdb"),
                        {f(t, "d.rsdb")}});
    commands.push_back({"retrieve --db " + f(t, "d.rsdb") + " --retriever " + f(t, "r.rsde") + " --image " +
                            dir.file("image.json") + " --report " + f(t, "ret.jsonl"),
                        {f(t, "ret.jsonl")}});
    commands.push_back({"train --stage 1 --data " + f(t, "cap.jsonl") + " --out " + f(t, "s1.rsck"), {f(t, "s1.rsck")}});
    commands.push_back({"train --stage 2 --data " + f(t, "ins.jsonl") + " --init " + f(t, "s1.rsck") + " --out " +
                            f(t, "s2.rsck"),
                        {f(t, "s2.rsck")}});
    commands.push_back({"predict --checkpoint " + f(t, "s2.rsck") + " --input " + f(t, "ins.jsonl") + " --out " +
                            f(t, "pred.jsonl"),
                        {f(t, "pred.jsonl")}});
    commands.push_back({"eval --task vqa --truth " + f(t, "ins.jsonl") + " --predictions " + f(t, "pred.jsonl") +
                            " --report " + f(t, "eval.json"),
                        {f(t, "eval.json")}});
    commands.push_back({"grad-check --report " + f(t, "grad.json"), {f(t, "grad.json")}});
  }
  cli_harness::spit(dir.file("image.json"), "[[0.5, -1, 0.25, 2, 0, 1, -0.5, 0.75, 1, 1, 0, -1, 0.1, 0.2, 0.3, 0.4]]");
  for (const auto& [args, artifacts] : commands) {
    const auto r = run(cli, cfg + args, dir);
    if (r.code != 0) return {false, "command failed: " + args + ": " + r.err};
  }
  const std::size_t half = commands.size() / 2;
  std::size_t compared = 0;
  for (std::size_t i = 0; i < half; ++i) {
    for (std::size_t a = 0; a < commands[i].second.size(); ++a) {
      const std::string x = slurp(commands[i].second[a]);
      if (x.empty() || x != slurp(commands[i + half].second[a])) {
        return {false, "artifact differs: " + commands[i].second[a]};
      }
      ++compared;
    }
  }
  // Round trips through the in-memory forms.
  const auto db_bytes = slurp(f("a", "d.rsdb"));
  const auto ck_bytes = slurp(f("a", "s2.rsck"));
  const auto db_again = SemanticDatabase::load(f("a", "d.rsdb")).serialize();
  const auto ck_again = Model::load(f("a", "s2.rsck")).serialize();
  const bool round_trip = std::string(db_again.begin(), db_again.end()) == db_bytes &&
                          std::string(ck_again.begin(), ck_again.end()) == ck_bytes;
  return {round_trip, fmt("%zu commands x2, %zu artifacts byte-identical, RSDB/RSCK round trips %s", half, compared,
                          round_trip ? "exact" : "DIFFER")};
}

struct Criterion {
  int number;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "parameter arithmetic", 1.0, parameter_arithmetic},
      {2, "prompt shape contract", 1.0, shape_contract},
      {3, "gradient suite", 120.0, gradient_suite},
      {4, "router and mask invariants", 30.0, router_invariants},
      {5, "retrieval oracle", 10.0, retrieval_oracle},
      {6, "contrastive training efficacy", 120.0, contrastive_efficacy},
      {7, "overfit sanity", 600.0, overfit_sanity},
      {8, "metric kernels", 5.0, metric_kernels},
      {9, "determinism", 60.0, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s  %d. %-30s %7.2fs / %5.0fs  %s%s\n", pass ? "PASS" : "FAIL", c.number, c.name, secs,
                c.budget_seconds, o.detail.c_str(), in_time ? "" : " [over time budget]");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
