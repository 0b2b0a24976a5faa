#pragma once

// Multi-source pretraining: one dialogue, one short-text and one article
// batch per step, the three objectives plus the two adversarial critics,
// global clipping and Adam.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dams/checkpoint.hpp"
#include "dams/corpus.hpp"
#include "dams/objectives.hpp"
#include "dams/optim.hpp"

namespace dams {

struct PretrainData {
  std::vector<EncodedDialogue> dialogues;
  std::vector<EncodedPiece> pieces;
  std::vector<EncodedArticle> articles;

  std::array<std::size_t, 3> sizes() const { return {dialogues.size(), pieces.size(), articles.size()}; }
};

inline PretrainData encode_pretrain_data(const Vocab& vocab, const std::vector<Dialogue>& dialogues,
                                         const std::vector<TextPiece>& pieces,
                                         const std::vector<ArticleSummary>& articles, const Limits& lim) {
  PretrainData d;
  for (const auto& x : dialogues) d.dialogues.push_back(encode_dialogue(vocab, x, lim));
  for (const auto& x : pieces) d.pieces.push_back(encode_piece(vocab, x, lim));
  for (const auto& x : articles) d.articles.push_back(encode_article(vocab, x, lim));
  return d;
}

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t warmup = 150;
  std::size_t batch_size = 4;  // records per source per step
  double alpha = 0.1;          // critic loss weight
  double lr = 1e-3;
  // Critics trail a slowly moving encoder at the shared rate and lose the
  // adversarial game; 3e-2 was the fastest stable rate at toy scale.
  std::map<Group, double> group_lr{{Group::critic_e, 3e-2}, {Group::critic_g, 3e-2}};  // overrides lr
  std::map<Group, std::size_t> group_warmup;  // overrides warmup
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  std::size_t log_interval = 50;
  std::size_t checkpoint_interval = 0;  // 0: only at the end
  std::array<bool, 3> sources{true, true, true};  // dialogue, shorttext, article
  bool critic_e = true;
  bool critic_g = true;
  NoiseConfig noise;

  bool uses(Source s) const { return sources[static_cast<int>(s)]; }

  void validate() const {
    if (steps == 0) fail(ErrorKind::config, "train: steps must be positive");
    if (warmup == 0) fail(ErrorKind::config, "train: warmup must be positive");
    if (batch_size == 0) fail(ErrorKind::config, "train: batch_size must be positive");
    if (!(alpha >= 0)) fail(ErrorKind::config, "train: alpha must be non-negative");
    if (!(lr > 0)) fail(ErrorKind::config, "train: lr must be positive");
    for (const auto& [g, v] : group_lr)
      if (!(v >= 0)) fail(ErrorKind::config, "train: lr for group " + std::string(group_name(g)) + " is negative");
    if (!sources[0] && !sources[1] && !sources[2]) fail(ErrorKind::config, "train: every source is disabled");
  }

  LrSchedule schedule(Group g) const {
    LrSchedule s;
    s.base_lr = group_lr.count(g) ? group_lr.at(g) : lr;
    s.warmup_steps = group_warmup.count(g) ? group_warmup.at(g) : warmup;
    return s;
  }
};

struct LossBreakdown {
  std::size_t step = 0;
  double rec = 0, gen = 0, summ = 0, de = 0, dg = 0;
  double alpha = 0;
  double total = 0;
  double grad_norm = 0;
};

inline void write_log_header(std::ostream& os) { os << "# step\trec\tgen\tsumm\tde\tdg\talpha\ttotal\n"; }

inline void write_log_line(std::ostream& os, const LossBreakdown& b) {
  std::ostringstream line;
  line.precision(10);
  line << b.step << '\t' << b.rec << '\t' << b.gen << '\t' << b.summ << '\t' << b.de << '\t' << b.dg << '\t'
       << b.alpha << '\t' << b.total << '\n';
  os << line.str();
}

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void set_rng_state(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) fail(ErrorKind::data, "checkpoint: corrupt rng state");
}

/// Owns the optimizer, the stream and the per-source random generators.
/// Each source draws noise and dropout from its own generator, so disabling a
/// source leaves the others' randomness unchanged.
class Pretrainer {
 public:
  Pretrainer(DamsModel& model, const PretrainData& data, TrainConfig config)
      : model_(model),
        data_(data),
        config_(std::move(config)),
        stream_(stream_sizes(data, config_), config_.batch_size, config_.seed),
        opt_(make_groups(model, config_)) {
    config_.validate();
    for (int s = 0; s < 3; ++s) {
      std::seed_seq seq{std::uint32_t(config_.seed), std::uint32_t(config_.seed >> 32), std::uint32_t(s + 101)};
      rngs_[s].seed(seq);
    }
  }

  LossBreakdown step() {
    const StepTriple triple = stream_.at(opt_.step_count());
    const double rate = model_.config().dropout;
    model_.zero_grad();
    Tape<real> tape;
    TapeScope<real> scope(tape);

    std::vector<Tensor<real>> terms;
    std::vector<real> weights;
    LossBreakdown b;
    b.step = opt_.step_count() + 1;
    b.alpha = config_.alpha;

    std::optional<RecOutput> rec;
    std::optional<GenOutput> gen;
    std::optional<SummOutput> summ;
    if (config_.uses(Source::dialogue)) {
      auto& rng = rngs_[0];
      rec = rec_loss(model_, pick(data_.dialogues, triple.of(Source::dialogue)), rng, Mode::train(rate, rng),
                     config_.noise);
      b.rec = checked(rec->loss, "rec");
      terms.push_back(rec->loss);
      weights.push_back(1);
    }
    if (config_.uses(Source::shorttext)) {
      auto& rng = rngs_[1];
      gen = gen_loss(model_, pick(data_.pieces, triple.of(Source::shorttext)), rng, Mode::train(rate, rng),
                     config_.noise);
      b.gen = checked(gen->loss, "gen");
      terms.push_back(gen->loss);
      weights.push_back(1);
    }
    if (config_.uses(Source::article)) {
      auto& rng = rngs_[2];
      summ = summ_loss(model_, pick(data_.articles, triple.of(Source::article)), Mode::train(rate, rng));
      b.summ = checked(summ->loss, "summ");
      terms.push_back(summ->loss);
      weights.push_back(1);
    }
    if (config_.alpha > 0 && config_.critic_e && rec && summ) {
      if (auto l = critic_loss(model_, CriticId::e, rec->cls, summ->cls)) {
        b.de = checked(*l, "de");
        terms.push_back(*l);
        weights.push_back(real(config_.alpha));
      }
    }
    if (config_.alpha > 0 && config_.critic_g && gen && summ) {
      if (auto l = critic_loss(model_, CriticId::g, gen->memories, summ->memories)) {
        b.dg = checked(*l, "dg");
        terms.push_back(*l);
        weights.push_back(real(config_.alpha));
      }
    }

    Tensor<real> total = weighted_sum(terms, weights);
    b.total = checked(total, "total");
    tape.backward(total);
    b.grad_norm = opt_.clip(config_.clip_norm);
    if (!std::isfinite(b.grad_norm)) fail(ErrorKind::numeric, "step " + std::to_string(b.step) + ": gradient norm is not finite");
    opt_.step();
    tape.clear();
    return b;
  }

  std::size_t step_count() const { return opt_.step_count(); }
  const TrainConfig& config() const { return config_; }
  Adam<real>& optimizer() { return opt_; }
  DamsModel& model() { return model_; }

  Checkpoint checkpoint() const {
    Checkpoint ck = snapshot(model_, &opt_);
    for (const auto& r : rngs_) ck.rng_states.push_back(rng_state(r));
    return ck;
  }

  /// Restores parameters, moments, step and generators; the stream follows
  /// from the step count.
  void restore(const Checkpoint& ck) {
    restore_params(model_, ck);
    restore_optimizer(opt_, model_, ck);
    if (ck.rng_states.size() != rngs_.size()) fail(ErrorKind::data, "checkpoint: expected 3 rng states");
    for (std::size_t i = 0; i < rngs_.size(); ++i) set_rng_state(rngs_[i], ck.rng_states[i]);
  }

 private:
  static std::array<std::size_t, 3> stream_sizes(const PretrainData& data, const TrainConfig& cfg) {
    auto sizes = data.sizes();
    // a disabled source may be empty; give the stream a placeholder
    for (int s = 0; s < 3; ++s)
      if (!cfg.sources[s] && sizes[s] == 0) sizes[s] = 1;
    return sizes;
  }

  static std::vector<ParamGroup<real>> make_groups(const DamsModel& model, const TrainConfig& cfg) {
    std::vector<ParamGroup<real>> groups;
    for (Group g : kAllGroups) groups.push_back({std::string(group_name(g)), model.group_params(g), cfg.schedule(g)});
    return groups;
  }

  template <class R>
  static std::vector<const R*> pick(const std::vector<R>& all, const std::vector<std::size_t>& idx) {
    std::vector<const R*> out;
    for (auto i : idx) out.push_back(&all[i]);
    return out;
  }

  double checked(const Tensor<real>& t, const char* what) const {
    const double v = t.item();
    if (!std::isfinite(v))
      fail(ErrorKind::numeric, "step " + std::to_string(opt_.step_count() + 1) + ": loss component " + what +
                                   " is not finite");
    return v;
  }

  DamsModel& model_;
  const PretrainData& data_;
  TrainConfig config_;
  MixedStream stream_;
  Adam<real> opt_;
  std::array<std::mt19937_64, 3> rngs_;
};

}  // namespace dams
