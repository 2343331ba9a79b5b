// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/model.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "rsalign/binary_io.hpp"
#include "rsalign/config_json.hpp"
#include "rsalign/errors.hpp"
#include "rsalign/rng.hpp"

namespace rsalign {

namespace {

constexpr char kMagic[] = "RSCK";
constexpr std::uint16_t kFormatVersion = 1;
constexpr double kEmbedStd = 1.0;
constexpr double kPositionStd = 0.5;

std::string num(std::size_t v) { return std::to_string(v); }

void check_ids(std::span<const int> ids, std::size_t vocab, const char* what) {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DomainError(std::string(what) + ": token id " + std::to_string(id) +
                        " outside vocab of " + num(vocab));
    }
  }
}

}  // namespace

// ---- configuration ---------------------------------------------------------

std::vector<std::size_t> ModelConfig::tap_depths() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < num_levels; ++l) out.push_back((l + 1) * visual_blocks / num_levels);
  return out;
}

std::vector<std::size_t> ModelConfig::expert_block_indices() const {
  std::vector<std::size_t> out;
  if (expert_stride == 0) return out;
  for (std::size_t i = 0; i < lm_blocks; i += expert_stride) out.push_back(i);
  return out;
}

PrompterConfig ModelConfig::prompter() const {
  PrompterConfig c;
  c.num_agg_tokens = num_agg_tokens;
  c.dim = hidden;
  c.heads = prompter_heads;
  c.level_dims.assign(num_levels, visual_dim);
  return c;
}

ExpertLayerConfig ModelConfig::expert_layer() const {
  return {.hidden = hidden, .rank = expert_rank, .inner = inner(), .num_levels = num_levels};
}

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> out;
  auto positive = [&](std::size_t v, const char* name) {
    if (v == 0) out.push_back(std::string(name) + " must be >= 1");
  };
  positive(patch_dim, "patch_dim");
  positive(visual_dim, "visual_dim");
  positive(hidden, "hidden (d_h)");
  positive(lm_blocks, "lm_blocks");
  positive(expert_rank, "expert_rank (d_r)");
  positive(expert_stride, "expert_stride");
  positive(num_levels, "num_levels (L)");
  positive(num_agg_tokens, "num_agg_tokens (N_a)");
  positive(max_semantic_tokens, "max_semantic_tokens");
  if (expert_rank != 0 && hidden != 0 && expert_rank >= hidden) {
    out.push_back("expert_rank (d_r) " + num(expert_rank) + " must be < hidden (d_h) " +
                  num(hidden));
  }
  if (visual_blocks < 3) out.push_back("visual_blocks must be >= 3, got " + num(visual_blocks));
  if (num_levels != 0 && visual_blocks < num_levels) {
    out.push_back("visual_blocks " + num(visual_blocks) + " cannot supply " + num(num_levels) +
                  " distinct tap depths");
  }
  auto divisible = [&](std::size_t dim, std::size_t heads, const char* name) {
    if (heads == 0 || (dim != 0 && dim % heads != 0)) {
      out.push_back(std::string(name) + " " + num(heads) + " must divide width " + num(dim));
    }
  };
  divisible(visual_dim, visual_heads, "visual_heads");
  divisible(hidden, lm_heads, "lm_heads");
  divisible(hidden, prompter_heads, "prompter_heads");
  if (vocab < 3) out.push_back("vocab must be >= 3 (two ids are reserved), got " + num(vocab));
  if (max_positions == 0) out.push_back("max_positions must be >= 1");
  return out;
}

void ModelConfig::validate() const {
  if (auto p = problems(); !p.empty()) throw ConfigError(std::move(p));
}

// ---- text ------------------------------------------------------------------

std::vector<int> encode_text(const ModelConfig& config, std::string_view text) {
  if (config.vocab != ModelConfig::kByteVocab) {
    throw InvalidArgument("encode_text: byte text needs vocab " + num(ModelConfig::kByteVocab) +
                          ", model has " + num(config.vocab));
  }
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

std::string decode_text(const ModelConfig& config, std::span<const int> ids) {
  std::string out;
  for (int id : ids)
    if (id >= 0 && id < 256 && id < config.sep_id()) out.push_back(static_cast<char>(id));
  return out;
}

std::vector<int> semantic_token_ids(const ModelConfig& config, std::span<const std::string> texts) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (i > 0) ids.push_back(config.sep_id());
    const auto t = encode_text(config, texts[i]);
    ids.insert(ids.end(), t.begin(), t.end());
    if (ids.size() >= config.max_semantic_tokens) break;
  }
  if (ids.size() > config.max_semantic_tokens) ids.resize(config.max_semantic_tokens);
  if (ids.empty()) ids.push_back(config.sep_id());
  return ids;
}

// ---- parameters ------------------------------------------------------------

VisualEncoderParams VisualEncoderParams::init(const ModelConfig& c, Rng& rng) {
  VisualEncoderParams p;
  p.patch_embed = nn::init_linear(c.patch_dim, c.visual_dim, rng);
  p.patch_bias = Matrix(1, c.visual_dim);
  for (std::size_t i = 0; i < c.visual_blocks; ++i) {
    VisualBlockParams b;
    b.attn = nn::AttentionParams::init(c.visual_dim, c.visual_dim, c.visual_dim, rng);
    b.mlp_norm = nn::LayerNormParams::init(c.visual_dim);
    b.mlp = nn::MlpParams::init(c.visual_dim, 4 * c.visual_dim, c.visual_dim, rng);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

void VisualEncoderParams::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".patch_embed", &patch_embed});
  out.push_back({prefix + ".patch_bias", &patch_bias});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string b = prefix + ".block." + num(i);
    blocks[i].attn.collect(b + ".attn", out);
    blocks[i].mlp_norm.collect(b + ".mlp_norm", out);
    blocks[i].mlp.collect(b + ".mlp", out);
  }
}

void LmBlockParams::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  attn.collect(prefix + ".attn", out);
  ffn_norm.collect(prefix + ".ffn_norm", out);
  if (has_experts()) {
    layer.collect(prefix + ".moe", out);
  } else {
    layer.ffn.collect(prefix + ".ffn", out);
  }
}

ModelParams ModelParams::init(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  ModelParams p;
  p.visual = VisualEncoderParams::init(c, rng);
  p.prompter = PrompterParams::init(c.prompter(), rng);
  p.projector = nn::init_linear(c.visual_dim, c.hidden, rng);
  p.projector_bias = Matrix(1, c.hidden);
  p.embed = random_normal(c.vocab, c.hidden, kEmbedStd, rng);
  p.positions = random_normal(c.max_positions, c.hidden, kPositionStd, rng);
  const auto experts = c.expert_block_indices();
  for (std::size_t i = 0; i < c.lm_blocks; ++i) {
    LmBlockParams b;
    b.attn = nn::AttentionParams::init(c.hidden, c.hidden, c.hidden, rng);
    b.ffn_norm = nn::LayerNormParams::init(c.hidden);
    if (std::find(experts.begin(), experts.end(), i) != experts.end()) {
      b.layer = ExpertLayerParams::init(c.expert_layer(), rng);
    } else {
      b.layer.ffn = nn::FeedForwardParams::init(c.hidden, c.inner(), rng);
    }
    p.blocks.push_back(std::move(b));
  }
  p.final_norm = nn::LayerNormParams::init(c.hidden);
  p.lm_head = nn::init_linear(c.hidden, c.vocab, rng);
  return p;
}

void ModelParams::collect_visual(std::vector<ParamRef>& out) { visual.collect("visual", out); }

void ModelParams::collect_prompter(std::vector<ParamRef>& out) {
  prompter.collect("prompter", out);
}

void ModelParams::collect_projector(std::vector<ParamRef>& out) {
  out.push_back({"projector.weight", &projector});
  out.push_back({"projector.bias", &projector_bias});
}

void ModelParams::collect_lm(std::vector<ParamRef>& out) {
  out.push_back({"lm.embed", &embed});
  out.push_back({"lm.positions", &positions});
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("lm.block." + num(i), out);
  final_norm.collect("lm.final_norm", out);
  out.push_back({"lm.head", &lm_head});
}

std::vector<ParamRef> ModelParams::collect_all() {
  std::vector<ParamRef> out;
  collect_visual(out);
  collect_prompter(out);
  collect_projector(out);
  collect_lm(out);
  return out;
}

// ---- model -----------------------------------------------------------------

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(ModelParams::init(config_, seed)) {}

Model::Model(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  // Shapes must match a fresh initialization exactly.
  ModelParams fresh = ModelParams::init(config_, 0);
  auto want = fresh.collect_all();
  auto got = params_.collect_all();
  if (want.size() != got.size()) {
    throw ShapeError("model: " + num(got.size()) + " parameter blocks, configuration needs " +
                     num(want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].name != got[i].name || !want[i].value->same_shape(*got[i].value)) {
      throw ShapeError("model: parameter " + got[i].name + " " + got[i].value->shape_string() +
                       " does not match " + want[i].name + " " + want[i].value->shape_string());
    }
  }
}

std::vector<ad::Var> Model::encode_multilevel(ad::Tape& tape, ad::Var patches) const {
  if (patches.rows() == 0) throw ShapeError("encode_multilevel: image has no patches");
  if (patches.cols() != config_.patch_dim) {
    throw ShapeError("encode_multilevel: patches " + patches.value().shape_string() +
                     ", expected width " + num(config_.patch_dim));
  }
  const auto& v = params_.visual;
  ad::Var x = ad::add_bias(ad::matmul(patches, tape.param(v.patch_embed)), tape.param(v.patch_bias));
  nn::AttentionOptions opts;
  opts.heads = config_.visual_heads;
  const auto taps = config_.tap_depths();
  std::vector<ad::Var> levels;
  for (std::size_t i = 0; i < v.blocks.size(); ++i) {
    const auto& b = v.blocks[i];
    x = nn::self_attention(tape, b.attn, x, opts);
    x = ad::add(x, nn::mlp(tape, b.mlp, nn::layer_norm(tape, b.mlp_norm, x)));
    for (std::size_t depth : taps)
      if (depth == i + 1) levels.push_back(x);
  }
  return levels;
}

std::vector<Matrix> Model::encode_multilevel(const Matrix& patches) const {
  ad::Tape tape(false);
  std::vector<Matrix> out;
  for (const auto& v : encode_multilevel(tape, tape.constant(patches))) out.push_back(v.value());
  return out;
}

ad::Var Model::assemble_sequence(ad::Tape& tape, ad::Var image_tokens, ad::Var prompt,
                                 std::span<const int> token_ids, SequenceLayout& layout) const {
  const std::size_t n_a = config_.num_agg_tokens;
  const std::size_t levels = config_.num_levels;
  if (image_tokens.rows() == 0) throw ShapeError("assemble_sequence: no image tokens");
  if (prompt.rows() == 0 || prompt.rows() % n_a != 0 || prompt.rows() / n_a != levels) {
    throw ShapeError("assemble_sequence: prompt has " + num(prompt.rows()) + " rows, expected " +
                     num(n_a) + " x " + num(levels));
  }
  if (image_tokens.cols() != config_.hidden || prompt.cols() != config_.hidden) {
    throw ShapeError("assemble_sequence: image tokens " + image_tokens.value().shape_string() +
                     " and prompt " + prompt.value().shape_string() + " must have width " +
                     num(config_.hidden));
  }
  check_ids(token_ids, config_.vocab, "assemble_sequence");
  layout.segments.assign(image_tokens.rows(), Segment::image());
  for (std::size_t l = 0; l < levels; ++l)
    layout.segments.insert(layout.segments.end(), n_a, Segment::semantic(l));
  layout.segments.insert(layout.segments.end(), token_ids.size(), Segment::query());
  layout.token_ids.assign(image_tokens.rows() + prompt.rows(), -1);
  layout.token_ids.insert(layout.token_ids.end(), token_ids.begin(), token_ids.end());
  std::vector<ad::Var> parts{image_tokens, prompt};
  if (!token_ids.empty()) parts.push_back(ad::gather_rows(tape.param(params_.embed), token_ids));
  return ad::concat_rows(parts);
}

SegmentedTokens Model::assemble_sequence(const Matrix& image_tokens, const Matrix& prompt,
                                         std::span<const int> token_ids) const {
  ad::Tape tape(false);
  SequenceLayout layout;
  Matrix hidden = assemble_sequence(tape, tape.constant(image_tokens), tape.constant(prompt),
                                    token_ids, layout)
                      .value();
  return {std::move(hidden), std::move(layout.segments)};
}

LmOutput Model::forward_lm(ad::Tape& tape, ad::Var hidden, std::span<const Segment> segments,
                           std::span<const int> targets) const {
  const std::size_t T = hidden.rows();
  if (segments.size() != T || targets.size() != T) {
    throw ShapeError("forward_lm: " + num(T) + " rows, " + num(segments.size()) +
                     " segments, " + num(targets.size()) + " targets");
  }
  if (hidden.cols() != config_.hidden) {
    throw ShapeError("forward_lm: hidden " + hidden.value().shape_string() + ", expected width " +
                     num(config_.hidden));
  }
  if (T == 0) throw ShapeError("forward_lm: empty sequence");
  if (T > config_.max_positions) {
    throw ShapeError("forward_lm: sequence of " + num(T) + " rows exceeds max_positions " +
                     num(config_.max_positions));
  }
  validate_segments(segments, config_.num_levels);
  bool any_target = false;
  for (std::size_t t = 0; t < T; ++t) {
    if (targets[t] < 0) continue;
    if (segments[t].kind != SegmentKind::kQuery) {
      throw InvalidArgument("forward_lm: target at row " + num(t) +
                            " which is not a query/response position");
    }
    if (static_cast<std::size_t>(targets[t]) >= config_.vocab) {
      throw DomainError("forward_lm: target id " + std::to_string(targets[t]) +
                        " outside vocab of " + num(config_.vocab));
    }
    any_target = true;
  }

  ad::Var x = ad::add(hidden, ad::slice_rows(tape.param(params_.positions), 0, T));
  nn::AttentionOptions opts;
  opts.heads = config_.lm_heads;
  opts.causal = true;
  for (const auto& b : params_.blocks) {
    x = nn::self_attention(tape, b.attn, x, opts);
    ad::Var y = nn::layer_norm(tape, b.ffn_norm, x);
    ad::Var f = b.has_experts() ? expert_block_forward(tape, b.layer, y, segments)
                                : nn::feed_forward(tape, b.layer.ffn, y);
    x = ad::add(x, f);
  }
  ad::Var logits =
      ad::matmul(nn::layer_norm(tape, params_.final_norm, x), tape.param(params_.lm_head));
  LmOutput out{logits, std::nullopt};
  if (any_target) out.loss = ad::cross_entropy(logits, targets);
  return out;
}

void Model::check_sample(const Sample& s) const {
  if (s.patches.rows() == 0) throw ShapeError("sample: image has no patches");
  if (s.patches.cols() != config_.patch_dim) {
    throw ShapeError("sample: patches " + s.patches.shape_string() + ", expected width " +
                     num(config_.patch_dim));
  }
  if (!s.patches.all_finite()) throw DomainError("sample: non-finite image feature");
  if (s.semantics.empty()) throw InvalidArgument("sample: semantic token list is empty");
  check_ids(s.query, config_.vocab, "sample query");
  check_ids(s.response, config_.vocab, "sample response");
  check_ids(s.semantics, config_.vocab, "sample semantics");
}

ad::Var Model::prompt_for(ad::Tape& tape, const std::vector<ad::Var>& levels,
                          std::span<const int> query, std::span<const int> semantics) const {
  std::vector<int> user(query.begin(), query.end());
  user.push_back(config_.sep_id());
  ad::Var embed = tape.param(params_.embed);
  return build_prompt(tape, config_.prompter(), params_.prompter, ad::gather_rows(embed, user),
                      ad::gather_rows(embed, semantics), levels);
}

LmOutput Model::forward(ad::Tape& tape, const Sample& sample) const {
  check_sample(sample);
  const auto levels = encode_multilevel(tape, tape.constant(sample.patches));
  ad::Var image = ad::add_bias(ad::matmul(levels.back(), tape.param(params_.projector)),
                               tape.param(params_.projector_bias));
  ad::Var prompt = prompt_for(tape, levels, sample.query, sample.semantics);

  std::vector<int> ids(sample.query.begin(), sample.query.end());
  ids.push_back(config_.sep_id());
  const std::size_t first_response = ids.size();
  ids.insert(ids.end(), sample.response.begin(), sample.response.end());
  ids.push_back(config_.eos_id());

  SequenceLayout layout;
  ad::Var hidden = assemble_sequence(tape, image, prompt, ids, layout);
  const std::size_t offset = hidden.rows() - ids.size();
  std::vector<int> targets(hidden.rows(), -1);
  for (std::size_t j = first_response; j < ids.size(); ++j) targets[offset + j - 1] = ids[j];
  return forward_lm(tape, hidden, layout.segments, targets);
}

double Model::loss(const Sample& sample) const {
  ad::Tape tape(false);
  return (*forward(tape, sample).loss).value()(0, 0);
}

std::vector<int> Model::generate(const Matrix& patches, std::span<const int> query,
                                 std::span<const int> semantics, std::size_t max_tokens) const {
  Sample probe{patches, {query.begin(), query.end()}, {}, {semantics.begin(), semantics.end()}};
  check_sample(probe);
  std::vector<int> out;
  if (max_tokens == 0) return out;

  Matrix image, prompt;
  {
    ad::Tape tape(false);
    const auto levels = encode_multilevel(tape, tape.constant(patches));
    image = ad::add_bias(ad::matmul(levels.back(), tape.param(params_.projector)),
                         tape.param(params_.projector_bias))
                .value();
    prompt = prompt_for(tape, levels, query, semantics).value();
  }
  std::vector<int> ids(query.begin(), query.end());
  ids.push_back(config_.sep_id());
  while (out.size() < max_tokens) {
    if (image.rows() + prompt.rows() + ids.size() > config_.max_positions) break;
    ad::Tape tape(false);
    SequenceLayout layout;
    ad::Var hidden =
        assemble_sequence(tape, tape.constant(image), tape.constant(prompt), ids, layout);
    const std::vector<int> targets(hidden.rows(), -1);
    const Matrix& logits = forward_lm(tape, hidden, layout.segments, targets).logits.value();
    const auto last = logits.row(logits.rows() - 1);
    const int next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    if (next == config_.eos_id()) break;
    out.push_back(next);
    ids.push_back(next);
  }
  return out;
}

// ---- checkpoint ------------------------------------------------------------

std::vector<char> Model::serialize() const {
  auto& self = const_cast<ModelParams&>(params_);
  const auto refs = self.collect_all();
  nlohmann::json manifest;
  manifest["config"] = model_config_to_json(config_);
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& r : refs)
    blocks.push_back({{"name", r.name}, {"shape", {r.value->rows(), r.value->cols()}}});
  manifest["blocks"] = std::move(blocks);
  const std::string text = manifest.dump();

  bin::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  for (const auto& r : refs)
    for (double v : r.value->values()) w.f32(static_cast<float>(v));
  return w.buffer();
}

Model Model::deserialize(std::span<const char> bytes) {
  bin::Reader r(bytes);
  if (r.bytes(std::min<std::size_t>(4, r.remaining()), "magic") != std::string_view(kMagic, 4)) {
    r.fail_at("bad magic, expected \"RSCK\"", 0);
  }
  const std::uint16_t version = r.u16("format version");
  if (version != kFormatVersion) r.fail_at("unsupported RSCK version " + std::to_string(version), 4);
  const std::uint32_t length = r.u32("manifest length");
  const std::size_t manifest_at = r.offset();
  const std::string text = r.bytes(length, "manifest");
  nlohmann::json manifest = nlohmann::json::parse(text, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object() || !manifest.contains("config") ||
      !manifest.contains("blocks") || !manifest["blocks"].is_array()) {
    r.fail_at("manifest is not a valid JSON object with config and blocks", manifest_at);
  }
  ModelConfig config;
  std::vector<std::string> problems;
  model_config_from_json(manifest["config"], config, problems);
  for (auto& p : config.problems()) problems.push_back(std::move(p));
  if (!problems.empty()) {
    std::string all;
    for (const auto& p : problems) all += (all.empty() ? "" : "; ") + p;
    r.fail_at("manifest config invalid: " + all, manifest_at);
  }

  ModelParams params = ModelParams::init(config, 0);
  auto refs = params.collect_all();
  const auto& blocks = manifest["blocks"];
  if (blocks.size() != refs.size()) {
    r.fail_at("manifest lists " + num(blocks.size()) + " blocks, configuration needs " +
                  num(refs.size()),
              manifest_at);
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& b = blocks[i];
    const bool ok = b.is_object() && b.value("name", "") == refs[i].name && b.contains("shape") &&
                    b["shape"] == nlohmann::json{refs[i].value->rows(), refs[i].value->cols()};
    if (!ok) {
      r.fail_at("manifest block " + num(i) + " does not match expected " + refs[i].name + " " +
                    refs[i].value->shape_string(),
                manifest_at);
    }
  }
  for (const auto& ref : refs) {
    for (auto& v : ref.value->values()) {
      const std::size_t at = r.offset();
      const float f = r.f32(ref.name.c_str());
      if (!std::isfinite(f)) r.fail_at("non-finite value in " + ref.name, at);
      v = f;
    }
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last parameter block");
  return Model(std::move(config), std::move(params));
}

void Model::save(const std::string& path) const { bin::write_file(path, serialize()); }

Model Model::load(const std::string& path) { return deserialize(bin::read_file(path)); }

// ---- training --------------------------------------------------------------

std::vector<std::string> TrainOptions::problems() const {
  std::vector<std::string> out;
  if (batch_size == 0) out.emplace_back("train: batch_size must be >= 1");
  for (auto [v, name] : {std::pair{lr_visual, "lr_visual"}, std::pair{lr_prompter, "lr_prompter"},
                         std::pair{lr_lm, "lr_lm"}}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      out.push_back(std::string("train: ") + name + " must be a finite value >= 0");
    }
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) out.emplace_back("train: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) out.emplace_back("train: beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) out.emplace_back("train: adam_eps must be > 0");
  if (!(weight_decay >= 0.0)) out.emplace_back("train: weight_decay must be >= 0");
  return out;
}

double mean_loss(const Model& model, std::span<const Sample> samples) {
  if (samples.empty()) throw InvalidArgument("mean_loss: no samples");
  double total = 0.0;
  for (const auto& s : samples) total += model.loss(s);
  return total / static_cast<double>(samples.size());
}

TrainLog train(Model& model, std::span<const Sample> samples, const TrainOptions& options) {
  if (auto p = options.problems(); !p.empty()) throw ConfigError(std::move(p));
  if (samples.empty()) throw InvalidArgument("train: no samples");

  struct Group {
    std::vector<ParamRef> refs;
    double lr;
  };
  auto& params = model.params();
  std::vector<Group> groups;
  auto add = [&](double lr, auto&& collect) {
    if (lr <= 0.0) return;
    Group g{{}, lr};
    collect(g.refs);
    groups.push_back(std::move(g));
  };
  add(options.lr_prompter, [&](auto& out) { params.collect_prompter(out); });
  if (options.stage == TrainStage::kAlignment) {
    if (options.train_projector)
      add(options.lr_prompter, [&](auto& out) { params.collect_projector(out); });
  } else {
    add(options.lr_prompter, [&](auto& out) { params.collect_projector(out); });
    add(options.lr_visual, [&](auto& out) { params.collect_visual(out); });
    add(options.lr_lm, [&](auto& out) { params.collect_lm(out); });
  }

  struct Slot {
    Matrix* value;
    double lr;
    Matrix m, v, grad;
  };
  std::vector<Slot> slots;
  for (const auto& g : groups)
    for (const auto& r : g.refs) {
      const Matrix& p = *r.value;
      slots.push_back({r.value, g.lr, Matrix(p.rows(), p.cols()), Matrix(p.rows(), p.cols()),
                       Matrix(p.rows(), p.cols())});
    }

  TrainLog log;
  log.initial_loss = mean_loss(model, samples);
  if (!std::isfinite(log.initial_loss)) throw NumericError("train: non-finite initial loss");

  const std::size_t n = samples.size();
  const std::size_t batch = std::min(options.batch_size, n);
  Rng rng(options.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t cursor = n;  // forces a shuffle on the first step

  for (std::size_t step = 0; step < options.steps; ++step) {
    std::vector<std::size_t> picked;
    while (picked.size() < batch) {
      if (cursor == n) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      picked.push_back(order[cursor++]);
    }
    if (batch == n) std::sort(picked.begin(), picked.end());

    for (auto& s : slots) s.grad *= 0.0;
    double batch_loss = 0.0;
    const double inv = 1.0 / static_cast<double>(batch);
    for (std::size_t idx : picked) {
      ad::Tape tape(true);
      ad::Var loss = *model.forward(tape, samples[idx]).loss;
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        throw NumericError("train: non-finite loss at step " + num(step) + ", sample " +
                           num(idx));
      }
      batch_loss += value * inv;
      if (slots.empty()) continue;
      tape.backward(loss);
      for (auto& s : slots) {
        Matrix g = tape.param_grad(*s.value);
        g *= inv;
        s.grad += g;
      }
    }
    log.batch_loss.push_back(batch_loss);
    if (options.target_loss && batch == n && batch_loss < *options.target_loss) break;

    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(options.beta1, t);
    const double c2 = 1.0 - std::pow(options.beta2, t);
    for (auto& s : slots) {
      auto p = s.value->values();
      auto m = s.m.values();
      auto v = s.v.values();
      auto g = s.grad.values();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g[i];
        v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g[i] * g[i];
        const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + options.adam_eps);
        p[i] -= s.lr * (update + options.weight_decay * p[i]);
      }
    }
    ++log.steps_run;
  }
  log.final_loss = mean_loss(model, samples);
  if (!std::isfinite(log.final_loss)) throw NumericError("train: non-finite final loss");
  return log;
}

// ---- gradient check --------------------------------------------------------

GradReport check_model_gradients(const ModelConfig& config, std::uint64_t seed,
                                 std::size_t probes_per_param) {
  Model model(config, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto& b : model.params().blocks) {
    if (!b.has_experts()) continue;
    for (auto& e : b.layer.experts) {
      e.down = random_normal(e.down.rows(), e.down.cols(), 0.3, rng);
      e.up = random_normal(e.up.rows(), e.up.cols(), 0.3, rng);
    }
    b.layer.gate = random_normal(b.layer.gate.rows(), b.layer.gate.cols(), 0.3, rng);
  }
  const int usable = config.sep_id();
  auto draw = [&](std::size_t count) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < count; ++i) ids.push_back(static_cast<int>(rng.below(usable)));
    return ids;
  };
  Sample sample{random_normal(3, config.patch_dim, 1.0, rng), draw(2), draw(3), draw(4)};
  sample.semantics[2] = config.sep_id();

  auto refs = model.params().collect_all();
  GradCheckOptions opts;
  opts.probes_per_param = probes_per_param;
  opts.seed = seed;
  return check_gradients([&](ad::Tape& t) { return *model.forward(t, sample).loss; }, refs, opts);
}

}  // namespace rsalign
