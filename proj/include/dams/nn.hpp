#pragma once

// Transformer blocks and the DAMS parameter groups.
//
// Sequences travel through the network packed: the rows of every sequence in
// a batch are stacked into one matrix and attention is restricted to each
// sequence's own rows, so no padding is ever materialised internally. The
// padded entry points (encode_sequence, hier_encode, summary_decode with a
// memory mask) build the same layouts with key masks instead.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dams/ops.hpp"

namespace dams {

/// Reserved token ids shared by the vocabulary and the model.
namespace token {
inline constexpr int pad = 0;
inline constexpr int cls = 1;
inline constexpr int mask = 2;
inline constexpr int bos = 3;
inline constexpr int eos = 4;
inline constexpr int unk = 5;
inline constexpr int num_specials = 6;
}  // namespace token

struct BlockConfig {
  int layers = 2;
  int heads = 4;
  int model_dim = 64;
  int ffn_dim = 256;
  int max_positions = 64;   // tokens per utterance or sentence, incl. [CLS]/[BOS]/[EOS]
  int max_sentences = 24;   // sentence slots in the hierarchical encoders
  double dropout = 0.1;
  double init_std = 0.02;  // weight init; 0 means 1/sqrt(model_dim)

  // At d=64 a 0.02 init gives each projection a gain of 0.16, so sentence
  // content reaching [CLS] is ~1% of the constant part and barely trains.
  // Dropout is off because a 3,000-step toy run underfits.
  static BlockConfig toy() {
    BlockConfig c;
    c.dropout = 0;
    c.init_std = 0;
    return c;
  }
  static BlockConfig paper() { return {6, 8, 768, 2048, 512, 64, 0.1, 0.02}; }

  double weight_std() const { return init_std > 0 ? init_std : 1.0 / std::sqrt(double(model_dim)); }

  void validate() const {
    if (layers <= 0 || heads <= 0 || model_dim <= 0 || ffn_dim <= 0 || max_positions <= 0 ||
        max_sentences <= 0)
      fail(ErrorKind::config, "block config: all dimensions must be positive");
    if (model_dim % heads != 0)
      fail(ErrorKind::config, "block config: model_dim " + std::to_string(model_dim) +
                                  " not divisible by heads " + std::to_string(heads));
    if (dropout < 0.0 || dropout >= 1.0) fail(ErrorKind::config, "block config: dropout must be in [0,1)");
    if (!(init_std >= 0)) fail(ErrorKind::config, "block config: init_std must be non-negative");
  }
};

/// Named parameter groups. Every model parameter belongs to exactly one.
enum class Group : int {
  embeddings = 0,
  dialogue_encoder,    // token-level utterance/sentence encoder
  utterance_decoder,   // conditional decoder, no cross attention
  sentence_encoder,    // short-text sentence encoder
  sentence_hier,       // hierarchical encoder over short-text sentences
  summary_decoder,     // decoder with sentence-level memories
  bridge_hier,         // hierarchical context encoder bridging encoder and decoder
  critic_e,
  critic_g,
};

inline constexpr std::array<Group, 9> kAllGroups = {
    Group::embeddings,     Group::dialogue_encoder, Group::utterance_decoder,
    Group::sentence_encoder, Group::sentence_hier,  Group::summary_decoder,
    Group::bridge_hier,    Group::critic_e,         Group::critic_g};

inline std::string_view group_name(Group g) {
  switch (g) {
    case Group::embeddings: return "embeddings";
    case Group::dialogue_encoder: return "dialogue_encoder";
    case Group::utterance_decoder: return "utterance_decoder";
    case Group::sentence_encoder: return "sentence_encoder";
    case Group::sentence_hier: return "sentence_hier";
    case Group::summary_decoder: return "summary_decoder";
    case Group::bridge_hier: return "bridge_hier";
    case Group::critic_e: return "critic_e";
    case Group::critic_g: return "critic_g";
  }
  return "?";
}

enum class EncoderId { dialogue, sentence };
enum class HierId { sentence, bridge };
enum class CriticId { e, g };

struct NamedParam {
  std::string name;
  Group group;
  Tensor<real> tensor;
};

/// Training-time randomness. A null rng disables dropout.
struct Mode {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  static Mode eval() { return {}; }
  static Mode train(double rate, std::mt19937_64& rng) { return {rate, &rng}; }
};

/// Row-packed batch of token sequences.
struct Packed {
  std::vector<int> ids;
  std::vector<std::size_t> offsets{0};  // size = count + 1

  std::size_t count() const { return offsets.size() - 1; }
  std::size_t length(std::size_t i) const { return offsets[i + 1] - offsets[i]; }

  void push(std::span<const int> seq) {
    ids.insert(ids.end(), seq.begin(), seq.end());
    offsets.push_back(ids.size());
  }

  static Packed from(const std::vector<std::vector<int>>& seqs) {
    Packed p;
    for (const auto& s : seqs) p.push(s);
    return p;
  }
};

/// Padded B×W token matrix; pad[b*W + j] marks padding.
struct TokenMatrix {
  std::size_t batch = 0, width = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> pad;

  static TokenMatrix from_rows(const std::vector<std::vector<int>>& rows, int pad_id = 0) {
    TokenMatrix m;
    m.batch = rows.size();
    for (const auto& r : rows) m.width = std::max(m.width, r.size());
    m.ids.assign(m.batch * m.width, pad_id);
    m.pad.assign(m.batch * m.width, 1);
    for (std::size_t b = 0; b < rows.size(); ++b)
      for (std::size_t j = 0; j < rows[b].size(); ++j) {
        m.ids[b * m.width + j] = rows[b][j];
        m.pad[b * m.width + j] = 0;
      }
    return m;
  }
};

struct EncodeResult {
  Tensor<real> cls_vecs;    // B×d
  Tensor<real> token_vecs;  // B×m×d
};

struct DecodeResult {
  Tensor<real> logits;  // ΣT×V
  Tensor<real> loss;    // scalar
};

namespace nn {

struct Linear {
  Tensor<real> w, b;
  Tensor<real> operator()(const Tensor<real>& x) const { return add_bias(matmul(x, w), b); }
};

struct Norm {
  Tensor<real> gain, bias;
  Tensor<real> operator()(const Tensor<real>& x) const { return layer_norm(x, gain, bias); }
};

struct Attention {
  Linear q, k, v, o;
};

struct Layer {
  Norm ln_self;
  Attention self;
  bool has_cross = false;
  Norm ln_cross;
  Attention cross;
  Norm ln_ffn;
  Linear ff_in, ff_out;
};

struct Stack {
  std::vector<Layer> layers;
  Norm final_norm;
};

struct Critic {
  Linear hidden, out;
};

}  // namespace nn

class DamsModel {
 public:
  DamsModel(const BlockConfig& config, std::size_t vocab_size, std::uint64_t seed)
      : config_(config), vocab_size_(vocab_size) {
    config_.validate();
    if (vocab_size < 8) fail(ErrorKind::config, "model: vocabulary too small");
    std::mt19937_64 rng(seed);
    const std::size_t d = dim();
    embed_ = make(Group::embeddings, "token_embedding", {vocab_size, d}, rng, Init::normal);
    dialogue_enc_ = make_stack(Group::dialogue_encoder, "dialogue_encoder", false, rng);
    utterance_dec_ = make_stack(Group::utterance_decoder, "utterance_decoder", false, rng);
    sentence_enc_ = make_stack(Group::sentence_encoder, "sentence_encoder", false, rng);
    sentence_hier_ = make_stack(Group::sentence_hier, "sentence_hier", false, rng);
    sentence_hier_pos_ = make(Group::sentence_hier, "sentence_hier.position",
                              {std::size_t(config_.max_sentences), d}, rng, Init::normal);
    summary_dec_ = make_stack(Group::summary_decoder, "summary_decoder", true, rng);
    bridge_hier_ = make_stack(Group::bridge_hier, "bridge_hier", false, rng);
    bridge_hier_pos_ = make(Group::bridge_hier, "bridge_hier.position",
                            {std::size_t(config_.max_sentences), d}, rng, Init::normal);
    critic_e_ = make_critic(Group::critic_e, "critic_e", rng);
    critic_g_ = make_critic(Group::critic_g, "critic_g", rng);

    positions_.assign(std::size_t(config_.max_positions) * d, real(0));
    for (std::size_t p = 0; p < std::size_t(config_.max_positions); ++p)
      for (std::size_t i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -double(i) / double(d));
        positions_[p * d + i] = real(std::sin(double(p) * freq));
        if (i + 1 < d) positions_[p * d + i + 1] = real(std::cos(double(p) * freq));
      }
  }

  DamsModel(const DamsModel&) = delete;
  DamsModel& operator=(const DamsModel&) = delete;

  const BlockConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t dim() const { return std::size_t(config_.model_dim); }

  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }

  std::vector<Tensor<real>> group_params(Group g) const {
    std::vector<Tensor<real>> out;
    for (const auto& p : params_)
      if (p.group == g) out.push_back(p.tensor);
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  const Tensor<real>& token_embedding() const { return embed_; }

  // -------------------------------------------------------------------------
  // Packed building blocks used by the training objectives.

  /// Final hidden states of every row of every packed sequence.
  Tensor<real> encode_packed(EncoderId which, const Packed& seqs, const Mode& mode) const {
    AttnLayout layout = self_layout(seqs.offsets, false);
    std::vector<std::size_t> pos = positions_within(seqs.offsets);
    check_positions(pos);
    Tensor<real> x = embed_tokens(seqs.ids, pos, mode);
    return run_stack(encoder(which), x, layout, nullptr, mode);
  }

  /// [CLS] vectors (first row of each sequence).
  Tensor<real> encode_cls(EncoderId which, const Packed& seqs, const Mode& mode) const {
    Tensor<real> h = encode_packed(which, seqs, mode);
    std::vector<std::size_t> first(seqs.count());
    for (std::size_t i = 0; i < first.size(); ++i) first[i] = seqs.offsets[i];
    return gather_rows(h, first);
  }

  /// Utterance decoder conditioned by adding each sequence's vector to every input embedding.
  Tensor<real> utterance_logits(const Tensor<real>& cond, const Packed& inputs, const Mode& mode) const {
    if (cond.rows() != inputs.count()) fail(ErrorKind::usage, "utterance decoder: one conditioning vector per sequence");
    std::vector<std::size_t> pos = positions_within(inputs.offsets);
    check_positions(pos);
    std::vector<std::size_t> owner(inputs.ids.size());
    for (std::size_t s = 0; s < inputs.count(); ++s)
      for (std::size_t r = inputs.offsets[s]; r < inputs.offsets[s + 1]; ++r) owner[r] = s;
    Tensor<real> x = add(embed_tokens(inputs.ids, pos, mode), gather_rows(cond, owner));
    Tensor<real> h = run_stack(utterance_dec_, x, self_layout(inputs.offsets, true), nullptr, mode);
    return matmul_nt(h, embed_);
  }

  /// Hierarchical encoder over packed sentence vectors; counts give sentences per document.
  Tensor<real> hier_packed(HierId which, const Tensor<real>& sentence_vecs,
                           const std::vector<std::size_t>& offsets, const Mode& mode) const {
    std::vector<std::size_t> pos = positions_within(offsets);
    for (auto p : pos)
      if (p >= std::size_t(config_.max_sentences))
        fail(ErrorKind::length, "hier_encode: " + std::to_string(p + 1) + " sentences exceed limit " +
                                    std::to_string(config_.max_sentences));
    const auto& table = which == HierId::sentence ? sentence_hier_pos_ : bridge_hier_pos_;
    Tensor<real> x = add(sentence_vecs, gather_rows(table, pos));
    x = dropout(x, mode.dropout, mode.rng);
    return run_stack(hier(which), x, self_layout(offsets, false), nullptr, mode);
  }

  /// Summary decoder attending sentence-level memories.
  Tensor<real> summary_logits(const Tensor<real>& memories, const AttnLayout& memory_layout,
                              const Packed& inputs, const Mode& mode) const {
    std::vector<std::size_t> pos = positions_within(inputs.offsets);
    check_positions(pos);
    Tensor<real> x = embed_tokens(inputs.ids, pos, mode);
    CrossInput cross{&memories, &memory_layout};
    Tensor<real> h = run_stack(summary_dec_, x, self_layout(inputs.offsets, true), &cross, mode);
    return matmul_nt(h, embed_);
  }

  /// Cross-attention layout pairing packed decoder rows with packed memory rows.
  static AttnLayout memory_layout(const std::vector<std::size_t>& query_offsets,
                                  const std::vector<std::size_t>& memory_offsets) {
    if (query_offsets.size() != memory_offsets.size())
      fail(ErrorKind::usage, "memory layout: batch size mismatch");
    AttnLayout l;
    for (std::size_t i = 0; i + 1 < query_offsets.size(); ++i) {
      if (memory_offsets[i + 1] == memory_offsets[i])
        fail(ErrorKind::invalid_batch, "summary_decode: empty memories");
      l.segments.push_back({query_offsets[i], query_offsets[i + 1] - query_offsets[i],
                            memory_offsets[i], memory_offsets[i + 1] - memory_offsets[i]});
    }
    return l;
  }

  /// Raw critic logits; reversal sits between the representations and the MLP.
  Tensor<real> critic_logits(CriticId which, const Tensor<real>& reps, bool apply_reversal) const {
    const auto& c = which == CriticId::e ? critic_e_ : critic_g_;
    Tensor<real> x = apply_reversal ? grad_reverse(reps) : reps;
    return c.out(tanh(c.hidden(x)));
  }

  // -------------------------------------------------------------------------
  // Padded entry points.

  EncodeResult encode_sequence(EncoderId which, const TokenMatrix& tokens, const Mode& mode) const {
    if (tokens.width > std::size_t(config_.max_positions))
      fail(ErrorKind::length, "encode_sequence: width " + std::to_string(tokens.width) +
                                  " exceeds max_positions " + std::to_string(config_.max_positions));
    if (tokens.width < 1 || tokens.batch < 1) fail(ErrorKind::invalid_batch, "encode_sequence: empty batch");
    const std::size_t B = tokens.batch, W = tokens.width, d = dim();
    AttnLayout layout = padded_layout(B, W, tokens.pad);
    std::vector<std::size_t> pos(B * W);
    for (std::size_t r = 0; r < pos.size(); ++r) pos[r] = r % W;
    Tensor<real> x = embed_tokens(tokens.ids, pos, mode);
    Tensor<real> h = run_stack(encoder(which), x, layout, nullptr, mode);
    std::vector<std::size_t> cls(B), rest;
    for (std::size_t b = 0; b < B; ++b) {
      cls[b] = b * W;
      for (std::size_t j = 1; j < W; ++j) rest.push_back(b * W + j);
    }
    return {gather_rows(h, cls), reshape(gather_rows(h, rest), {B, W - 1, d})};
  }

  /// sentence_vecs is B×n×d; pad marks empty sentence slots (B×n). Returns B×n×d.
  Tensor<real> hier_encode(HierId which, const Tensor<real>& sentence_vecs,
                           const std::vector<std::uint8_t>& pad, const Mode& mode) const {
    const auto& sh = sentence_vecs.shape();
    if (sh.size() != 3 || sh[2] != dim()) fail(ErrorKind::usage, "hier_encode: expected B×n×d input");
    const std::size_t B = sh[0], n = sh[1], d = dim();
    if (n < 1) fail(ErrorKind::invalid_batch, "hier_encode: no sentences");
    if (n > std::size_t(config_.max_sentences))
      fail(ErrorKind::length, "hier_encode: " + std::to_string(n) + " sentences exceed limit " +
                                  std::to_string(config_.max_sentences));
    std::vector<std::size_t> pos(B * n);
    for (std::size_t r = 0; r < pos.size(); ++r) pos[r] = r % n;
    const auto& table = which == HierId::sentence ? sentence_hier_pos_ : bridge_hier_pos_;
    Tensor<real> x = add(reshape(sentence_vecs, {B * n, d}), gather_rows(table, pos));
    x = dropout(x, mode.dropout, mode.rng);
    Tensor<real> h = run_stack(hier(which), x, padded_layout(B, n, pad), nullptr, mode);
    return reshape(h, {B, n, d});
  }

  /// Teacher-forced utterance reconstruction from a single conditioning vector.
  /// target is the clean utterance ending in [EOS]; inputs are [BOS] + target[:-1].
  DecodeResult reconstruct_utterance(const Tensor<real>& cls_vec, const std::vector<int>& target,
                                     const Mode& mode) const;

  /// memories is B×n×d with pad mask B×n; one target per batch item.
  DecodeResult summary_decode(const Tensor<real>& memories, const std::vector<std::uint8_t>& memory_pad,
                              const std::vector<std::vector<int>>& targets, const Mode& mode) const;

  Tensor<real> critic_score(CriticId which, const Tensor<real>& reps, bool apply_reversal) const {
    return sigmoid(critic_logits(which, reps, apply_reversal));
  }

 private:
  enum class Init { normal, ones, zeros };

  struct CrossInput {
    const Tensor<real>* memories;
    const AttnLayout* layout;
  };

  Tensor<real> make(Group g, std::string name, Shape shape, std::mt19937_64& rng, Init init) {
    std::vector<real> v(shape_size(shape));
    std::normal_distribution<double> nd(0.0, config_.weight_std());
    for (auto& x : v) x = init == Init::normal ? real(nd(rng)) : init == Init::ones ? real(1) : real(0);
    Tensor<real> t = Tensor<real>::parameter(std::move(shape), std::move(v));
    params_.push_back({std::move(name), g, t});
    return t;
  }

  nn::Linear make_linear(Group g, const std::string& name, std::size_t in, std::size_t out,
                         std::mt19937_64& rng) {
    return {make(g, name + ".w", {in, out}, rng, Init::normal), make(g, name + ".b", {out}, rng, Init::zeros)};
  }

  nn::Norm make_norm(Group g, const std::string& name, std::mt19937_64& rng) {
    return {make(g, name + ".gain", {dim()}, rng, Init::ones), make(g, name + ".bias", {dim()}, rng, Init::zeros)};
  }

  nn::Attention make_attention(Group g, const std::string& name, std::mt19937_64& rng) {
    return {make_linear(g, name + ".q", dim(), dim(), rng), make_linear(g, name + ".k", dim(), dim(), rng),
            make_linear(g, name + ".v", dim(), dim(), rng), make_linear(g, name + ".o", dim(), dim(), rng)};
  }

  nn::Stack make_stack(Group g, const std::string& name, bool cross, std::mt19937_64& rng) {
    nn::Stack s;
    for (int l = 0; l < config_.layers; ++l) {
      const std::string p = name + ".layer" + std::to_string(l);
      nn::Layer layer;
      layer.ln_self = make_norm(g, p + ".ln_self", rng);
      layer.self = make_attention(g, p + ".self", rng);
      layer.has_cross = cross;
      if (cross) {
        layer.ln_cross = make_norm(g, p + ".ln_cross", rng);
        layer.cross = make_attention(g, p + ".cross", rng);
      }
      layer.ln_ffn = make_norm(g, p + ".ln_ffn", rng);
      layer.ff_in = make_linear(g, p + ".ff_in", dim(), std::size_t(config_.ffn_dim), rng);
      layer.ff_out = make_linear(g, p + ".ff_out", std::size_t(config_.ffn_dim), dim(), rng);
      s.layers.push_back(std::move(layer));
    }
    s.final_norm = make_norm(g, name + ".final_norm", rng);
    return s;
  }

  nn::Critic make_critic(Group g, const std::string& name, std::mt19937_64& rng) {
    return {make_linear(g, name + ".hidden", dim(), 2 * dim(), rng), make_linear(g, name + ".out", 2 * dim(), 1, rng)};
  }

  const nn::Stack& encoder(EncoderId which) const {
    return which == EncoderId::dialogue ? dialogue_enc_ : sentence_enc_;
  }
  const nn::Stack& hier(HierId which) const { return which == HierId::sentence ? sentence_hier_ : bridge_hier_; }

  static std::vector<std::size_t> positions_within(const std::vector<std::size_t>& offsets) {
    std::vector<std::size_t> pos(offsets.back());
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
      for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) pos[r] = r - offsets[s];
    return pos;
  }

  void check_positions(const std::vector<std::size_t>& pos) const {
    for (auto p : pos)
      if (p >= std::size_t(config_.max_positions))
        fail(ErrorKind::length, "sequence of length " + std::to_string(p + 1) + " exceeds max_positions " +
                                    std::to_string(config_.max_positions));
  }

  static AttnLayout self_layout(const std::vector<std::size_t>& offsets, bool causal) {
    AttnLayout l;
    l.causal = causal;
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const std::size_t n = offsets[s + 1] - offsets[s];
      l.segments.push_back({offsets[s], n, offsets[s], n});
    }
    return l;
  }

  static AttnLayout padded_layout(std::size_t B, std::size_t W, const std::vector<std::uint8_t>& pad) {
    AttnLayout l;
    if (pad.size() != B * W) fail(ErrorKind::usage, "pad mask size does not match batch");
    for (std::size_t b = 0; b < B; ++b) l.segments.push_back({b * W, W, b * W, W});
    l.key_valid.resize(B * W);
    for (std::size_t i = 0; i < pad.size(); ++i) l.key_valid[i] = pad[i] ? 0 : 1;
    return l;
  }

  Tensor<real> embed_tokens(const std::vector<int>& ids, const std::vector<std::size_t>& pos,
                            const Mode& mode) const {
    const std::size_t d = dim();
    std::vector<real> pe(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r)
      std::copy_n(positions_.begin() + pos[r] * d, d, pe.begin() + r * d);
    Tensor<real> x = add(scale(embedding(embed_, std::span<const int>(ids)), real(std::sqrt(double(d)))),
                         Tensor<real>::constant({ids.size(), d}, std::move(pe)));
    return dropout(x, mode.dropout, mode.rng);
  }

  Tensor<real> attend(const nn::Attention& a, const Tensor<real>& q_in, const Tensor<real>& kv_in,
                      const AttnLayout& layout) const {
    Tensor<real> ctx = attention(a.q(q_in), a.k(kv_in), a.v(kv_in), layout, std::size_t(config_.heads));
    return a.o(ctx);
  }

  // Pre-norm residual blocks.
  Tensor<real> run_stack(const nn::Stack& stack, Tensor<real> x, const AttnLayout& layout,
                         const CrossInput* cross, const Mode& mode) const {
    for (const auto& layer : stack.layers) {
      Tensor<real> h = layer.ln_self(x);
      x = add(x, dropout(attend(layer.self, h, h, layout), mode.dropout, mode.rng));
      if (layer.has_cross) {
        if (!cross) fail(ErrorKind::usage, "decoder with cross attention needs memories");
        Tensor<real> hc = layer.ln_cross(x);
        x = add(x, dropout(attend(layer.cross, hc, *cross->memories, *cross->layout), mode.dropout, mode.rng));
      }
      Tensor<real> f = layer.ff_out(gelu(layer.ff_in(layer.ln_ffn(x))));
      x = add(x, dropout(f, mode.dropout, mode.rng));
    }
    return stack.final_norm(x);
  }

  BlockConfig config_;
  std::size_t vocab_size_;
  std::vector<NamedParam> params_;
  std::vector<real> positions_;
  Tensor<real> embed_;
  nn::Stack dialogue_enc_, utterance_dec_, sentence_enc_, sentence_hier_, summary_dec_, bridge_hier_;
  Tensor<real> sentence_hier_pos_, bridge_hier_pos_;
  nn::Critic critic_e_, critic_g_;
};

/// Per-sequence mean NLL, averaged over sequences.
inline Tensor<real> sequence_mean_nll(const Tensor<real>& logits, const Packed& targets) {
  std::vector<real> w(targets.ids.size());
  const real per_seq = real(1) / real(targets.count());
  for (std::size_t s = 0; s < targets.count(); ++s) {
    if (targets.length(s) == 0) fail(ErrorKind::invalid_batch, "empty target sequence");
    for (std::size_t r = targets.offsets[s]; r < targets.offsets[s + 1]; ++r)
      w[r] = per_seq / real(targets.length(s));
  }
  return weighted_cross_entropy<real>(logits, targets.ids, w);
}

/// Teacher-forcing inputs: [BOS] + target[:-1] for every target.
inline Packed shift_right(const Packed& targets, int bos_id) {
  Packed in;
  for (std::size_t s = 0; s < targets.count(); ++s) {
    std::vector<int> row{bos_id};
    for (std::size_t r = targets.offsets[s]; r + 1 < targets.offsets[s + 1]; ++r) row.push_back(targets.ids[r]);
    in.push(row);
  }
  return in;
}

inline DecodeResult DamsModel::reconstruct_utterance(const Tensor<real>& cls_vec,
                                                     const std::vector<int>& target,
                                                     const Mode& mode) const {
  if (target.empty()) fail(ErrorKind::invalid_batch, "reconstruct_utterance: empty target");
  Packed tg = Packed::from({target});
  Tensor<real> cond = reshape(cls_vec, {1, dim()});
  Tensor<real> logits = utterance_logits(cond, shift_right(tg, token::bos), mode);
  return {logits, sequence_mean_nll(logits, tg)};
}

inline DecodeResult DamsModel::summary_decode(const Tensor<real>& memories,
                                              const std::vector<std::uint8_t>& memory_pad,
                                              const std::vector<std::vector<int>>& targets,
                                              const Mode& mode) const {
  const auto& sh = memories.shape();
  if (sh.size() != 3 || sh[2] != dim()) fail(ErrorKind::usage, "summary_decode: expected B×n×d memories");
  const std::size_t B = sh[0], n = sh[1];
  if (B == 0 || n == 0) fail(ErrorKind::invalid_batch, "summary_decode: empty memories");
  if (targets.size() != B) fail(ErrorKind::usage, "summary_decode: one target per memory row");
  if (memory_pad.size() != B * n) fail(ErrorKind::usage, "summary_decode: memory pad mask size");
  Packed tg = Packed::from(targets);
  Packed in = shift_right(tg, token::bos);
  AttnLayout layout;
  layout.key_valid.resize(B * n);
  for (std::size_t b = 0; b < B; ++b) {
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) any = any || !memory_pad[b * n + j];
    if (!any) fail(ErrorKind::invalid_batch, "summary_decode: every memory slot is padded");
    layout.segments.push_back({in.offsets[b], in.length(b), b * n, n});
  }
  for (std::size_t i = 0; i < B * n; ++i) layout.key_valid[i] = memory_pad[i] ? 0 : 1;
  Tensor<real> logits = summary_logits(reshape(memories, {B * n, dim()}), layout, in, mode);
  return {logits, sequence_mean_nll(logits, tg)};
}

}  // namespace dams
