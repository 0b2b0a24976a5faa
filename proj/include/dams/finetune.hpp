#pragma once

// Fine-tuning of the stacked dialogue encoder → bridge → summary decoder
// path, dev-set metrics, and length-controlled beam search.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dams/checkpoint.hpp"
#include "dams/corpus.hpp"
#include "dams/objectives.hpp"
#include "dams/optim.hpp"
#include "dams/text.hpp"

namespace dams {

inline constexpr std::array<Group, 4> kFinetuneGroups = {Group::embeddings, Group::dialogue_encoder,
                                                         Group::bridge_hier, Group::summary_decoder};

struct FinetuneConfig {
  std::size_t steps = 1000;
  std::size_t warmup = 50;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  double clip_norm = 1.0;
  double train_fraction = 1.0;
  std::uint64_t seed = 1;
  std::size_t eval_interval = 50;

  void validate() const {
    if (warmup == 0) fail(ErrorKind::config, "finetune: warmup must be positive");
    if (batch_size == 0) fail(ErrorKind::config, "finetune: batch_size must be positive");
    if (!(lr > 0)) fail(ErrorKind::config, "finetune: lr must be positive");
    if (!(train_fraction >= 0 && train_fraction <= 1))
      fail(ErrorKind::config, "finetune: train_fraction must lie in [0,1]");
    if (train_fraction == 0 && steps > 0) fail(ErrorKind::config, "finetune: train_fraction 0 with non-zero steps");
  }
};

/// Seeded subsample of round(n·fraction) record indices, in ascending order.
inline std::vector<std::size_t> subsample(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0 && fraction <= 1)) fail(ErrorKind::config, "subsample: fraction must lie in [0,1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), 0x5ab5u};
  std::mt19937_64 rng(seq);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  idx.resize(static_cast<std::size_t>(std::llround(double(n) * fraction)));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Summarization loss with utterances as the sentence units (no noise).
inline SummOutput dialogue_summary_loss(const DamsModel& model, const std::vector<const EncodedDialogue*>& batch,
                                        const Mode& mode) {
  std::vector<const std::vector<std::vector<int>>*> docs;
  std::vector<const std::vector<int>*> sums;
  for (const auto* d : batch) {
    if (d->summary.empty()) fail(ErrorKind::data, "fine-tune: dialogue without summary");
    docs.push_back(&d->utterances);
    sums.push_back(&d->summary);
  }
  return summarize_units(model, docs, sums, mode);
}

struct DevMetrics {
  double loss = 0;            // mean token NLL
  double perplexity = 0;      // exp(loss)
  double word_accuracy = 0;   // teacher-forced argmax matches
  std::size_t tokens = 0;
};

/// Token-level dev perplexity and word accuracy under teacher forcing.
inline DevMetrics evaluate_dev(const DamsModel& model, const std::vector<EncodedDialogue>& dev,
                               std::size_t batch_size = 16) {
  if (dev.empty()) fail(ErrorKind::data, "dev set is empty");
  double nll = 0;
  std::size_t correct = 0, count = 0;
  for (std::size_t b = 0; b < dev.size(); b += batch_size) {
    std::vector<const EncodedDialogue*> batch;
    for (std::size_t i = b; i < std::min(dev.size(), b + batch_size); ++i) batch.push_back(&dev[i]);
    SummOutput out = dialogue_summary_loss(model, batch, Mode::eval());
    const auto& lg = out.logits;
    const std::size_t V = lg.cols();
    std::size_t row = 0;
    for (const auto* d : batch)
      for (int target : d->summary) {
        std::span<const real> z(lg.values().data() + row * V, V);
        const real mx = *std::max_element(z.begin(), z.end());
        double se = 0;
        for (real v : z) se += std::exp(double(v - mx));
        nll += std::log(se) + double(mx) - double(z[target]);
        const auto arg = std::size_t(std::max_element(z.begin(), z.end()) - z.begin());
        correct += arg == std::size_t(target);
        ++count;
        ++row;
      }
  }
  DevMetrics m;
  m.tokens = count;
  m.loss = nll / double(count);
  m.perplexity = std::exp(m.loss);
  m.word_accuracy = double(correct) / double(count);
  return m;
}

/// Trains only the stacked groups; the others stay byte-stable.
class Finetuner {
 public:
  Finetuner(DamsModel& model, const std::vector<EncodedDialogue>& train, FinetuneConfig config)
      : model_(model), train_(train), config_(std::move(config)), opt_(make_groups(model, config_)) {
    config_.validate();
    if (config_.steps > 0) sampler_.emplace(train_.size(), config_.batch_size, config_.seed, 7);
    std::seed_seq seq{std::uint32_t(config_.seed), std::uint32_t(config_.seed >> 32), 0xf1u};
    rng_.seed(seq);
  }

  double step() {
    if (!sampler_) fail(ErrorKind::config, "finetune: no training data");
    std::vector<const EncodedDialogue*> batch;
    for (auto i : sampler_->at(opt_.step_count())) batch.push_back(&train_[i]);
    model_.zero_grad();
    Tape<real> tape;
    TapeScope<real> scope(tape);
    SummOutput out = dialogue_summary_loss(model_, batch, Mode::train(model_.config().dropout, rng_));
    const double loss = out.loss.item();
    if (!std::isfinite(loss))
      fail(ErrorKind::numeric, "fine-tune step " + std::to_string(opt_.step_count() + 1) + ": loss is not finite");
    tape.backward(out.loss);
    opt_.clip(config_.clip_norm);
    opt_.step();
    tape.clear();
    return loss;
  }

  std::size_t step_count() const { return opt_.step_count(); }
  Adam<real>& optimizer() { return opt_; }

 private:
  static std::vector<ParamGroup<real>> make_groups(const DamsModel& model, const FinetuneConfig& cfg) {
    std::vector<ParamGroup<real>> groups;
    for (Group g : kFinetuneGroups)
      groups.push_back({std::string(group_name(g)), model.group_params(g), LrSchedule{cfg.warmup, cfg.lr}});
    return groups;
  }

  DamsModel& model_;
  const std::vector<EncodedDialogue>& train_;
  FinetuneConfig config_;
  Adam<real> opt_;
  std::optional<EpochSampler> sampler_;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Decoding

enum class LengthMode { normalized, none };

struct DecodeConfig {
  std::size_t beam_size = 3;
  std::size_t min_length = 15;
  std::size_t max_length = 40;
  LengthMode length_mode = LengthMode::normalized;
  double length_penalty = 0.7;  // exponent on length when normalized

  void validate() const {
    if (beam_size == 0) fail(ErrorKind::config, "decode: beam_size must be at least 1");
    if (min_length >= max_length) fail(ErrorKind::config, "decode: min_length must be below max_length");
  }
};

struct BeamHypothesis {
  std::vector<int> tokens;  // without [BOS]; ends with [EOS] when finished
  double log_prob = 0;
  bool finished = false;
};

inline double beam_rank_score(const BeamHypothesis& h, const DecodeConfig& cfg) {
  if (cfg.length_mode == LengthMode::none || h.tokens.empty()) return h.log_prob;
  return h.log_prob / std::pow(double(h.tokens.size()), cfg.length_penalty);
}

inline std::vector<double> log_softmax(std::span<const real> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double se = 0;
  for (real v : z) se += std::exp(double(v) - mx);
  const double lse = mx + std::log(se);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = double(z[i]) - lse;
  return out;
}

/// Tokens a decoder may never emit.
inline bool never_emitted(int id) {
  return id == token::pad || id == token::cls || id == token::mask || id == token::bos;
}

/// Whether some live hypothesis could still outrank the best finished one.
/// Log probabilities only decrease, so a live hypothesis is bounded by its
/// current log probability spread over the longest allowed length.
inline bool live_can_win(const std::vector<BeamHypothesis>& live, const std::vector<BeamHypothesis>& finished,
                         const DecodeConfig& cfg) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& h : finished) best = std::max(best, beam_rank_score(h, cfg));
  for (const auto& h : live) {
    const double bound = cfg.length_mode == LengthMode::none
                             ? h.log_prob
                             : h.log_prob / std::pow(double(cfg.max_length + 1), cfg.length_penalty);
    if (bound > best) return true;
  }
  return false;
}

/// Beam search over a next-token scorer. `next_log_probs(prefixes)` returns one
/// log-probability row per prefix (prefixes exclude [BOS]). [EOS] is suppressed
/// below min_length. Stops once beam_size hypotheses finished and no live one
/// can outrank them. Returns the best finished hypothesis, or the best
/// unfinished one if none finished by max_length.
template <class Scorer>
BeamHypothesis beam_search_with(Scorer&& next_log_probs, const DecodeConfig& cfg) {
  cfg.validate();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<BeamHypothesis> live{BeamHypothesis{}}, finished;
  for (std::size_t t = 0; t < cfg.max_length && !live.empty(); ++t) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const std::vector<std::vector<double>> rows = next_log_probs(prefixes);

    struct Cand {
      double score;
      std::size_t beam;
      int tok;
    };
    std::vector<Cand> cands;
    for (std::size_t b = 0; b < live.size(); ++b)
      for (std::size_t w = 0; w < rows[b].size(); ++w) {
        const int id = int(w);
        double lp = rows[b][w];
        if (never_emitted(id) || (id == token::eos && t < cfg.min_length)) lp = kNegInf;
        if (lp == kNegInf) continue;
        cands.push_back({live[b].log_prob + lp, b, id});
      }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.beam != b.beam) return a.beam < b.beam;
      return a.tok < b.tok;
    });
    std::vector<BeamHypothesis> next;
    std::size_t taken = 0;  // finished hypotheses also use a slot
    for (const auto& c : cands) {
      if (taken++ == cfg.beam_size) break;
      BeamHypothesis h = live[c.beam];
      h.tokens.push_back(c.tok);
      h.log_prob = c.score;
      if (c.tok == token::eos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (finished.size() >= cfg.beam_size && !live_can_win(live, finished, cfg)) break;
  }
  const auto& pool = finished.empty() ? live : finished;
  if (pool.empty()) fail(ErrorKind::numeric, "beam search: no hypothesis survived");
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i)
    if (beam_rank_score(pool[i], cfg) > beam_rank_score(pool[best], cfg)) best = i;
  return pool[best];
}

/// Argmax decoding under the same length rules as beam search.
template <class Scorer>
BeamHypothesis greedy_with(Scorer&& next_log_probs, const DecodeConfig& cfg) {
  cfg.validate();
  BeamHypothesis h;
  for (std::size_t t = 0; t < cfg.max_length; ++t) {
    const auto row = next_log_probs(std::vector<std::vector<int>>{h.tokens})[0];
    int best = -1;
    for (std::size_t w = 0; w < row.size(); ++w) {
      const int id = int(w);
      if (never_emitted(id) || (id == token::eos && t < cfg.min_length)) continue;
      if (best < 0 || row[w] > row[std::size_t(best)]) best = id;
    }
    h.tokens.push_back(best);
    h.log_prob += row[std::size_t(best)];
    if (best == token::eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

/// Next-token scorer for one dialogue: memories are computed once, then every
/// call decodes all prefixes as one packed batch against them.
class SummaryScorer {
 public:
  SummaryScorer(const DamsModel& model, const std::vector<std::vector<int>>& utterances) : model_(model) {
    if (utterances.empty()) fail(ErrorKind::invalid_batch, "summarize: dialogue without utterances");
    Packed sents = Packed::from(utterances);
    Tensor<real> cls = model.encode_cls(EncoderId::dialogue, sents, Mode::eval());
    memories_ = model.hier_packed(HierId::bridge, cls, {0, utterances.size()}, Mode::eval());
  }

  std::vector<std::vector<double>> operator()(const std::vector<std::vector<int>>& prefixes) const {
    Packed inputs;
    for (const auto& p : prefixes) {
      std::vector<int> seq{token::bos};
      seq.insert(seq.end(), p.begin(), p.end());
      inputs.push(seq);
    }
    AttnLayout layout;
    for (std::size_t i = 0; i < inputs.count(); ++i)
      layout.segments.push_back({inputs.offsets[i], inputs.length(i), 0, memories_.rows()});
    Tensor<real> logits = model_.summary_logits(memories_, layout, inputs, Mode::eval());
    const std::size_t V = logits.cols();
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < inputs.count(); ++i) {
      const std::size_t last = inputs.offsets[i + 1] - 1;
      rows.push_back(log_softmax(std::span<const real>(logits.values().data() + last * V, V)));
    }
    return rows;
  }

 private:
  const DamsModel& model_;
  Tensor<real> memories_;
};

inline void check_decode_fits(const DamsModel& model, const DecodeConfig& cfg) {
  if (cfg.max_length + 1 > std::size_t(model.config().max_positions))
    fail(ErrorKind::config, "decode: max_length " + std::to_string(cfg.max_length) + " exceeds decoder positions");
}

/// Emitted token ids, without the closing [EOS].
inline std::vector<int> beam_search(const DamsModel& model, const std::vector<std::vector<int>>& utterances,
                                    const DecodeConfig& cfg) {
  check_decode_fits(model, cfg);
  BeamHypothesis h = beam_search_with(SummaryScorer(model, utterances), cfg);
  if (h.finished) h.tokens.pop_back();
  return h.tokens;
}

inline std::vector<int> greedy_decode(const DamsModel& model, const std::vector<std::vector<int>>& utterances,
                                      const DecodeConfig& cfg) {
  check_decode_fits(model, cfg);
  BeamHypothesis h = greedy_with(SummaryScorer(model, utterances), cfg);
  if (h.finished) h.tokens.pop_back();
  return h.tokens;
}

inline std::string summarize(const DamsModel& model, const Vocab& vocab, const Dialogue& dialogue,
                             const DecodeConfig& cfg, const Limits& lim = {}) {
  const EncodedDialogue e = encode_dialogue(vocab, dialogue, lim);
  return detokenize(vocab.decode(beam_search(model, e.utterances, cfg)));
}

}  // namespace dams
