#pragma once

// Encoded training units, DAE noise, short-text truncation and the
// three-source mixed batch stream.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dams/records.hpp"
#include "dams/text.hpp"

namespace dams {

struct Limits {
  std::size_t max_tokens = 64;     // per utterance/sentence including [CLS]
  std::size_t max_sentences = 24;  // utterances per dialogue, sentences per article
};

/// [CLS]-prefixed unit; target tokens exclude [CLS].
inline std::vector<int> encode_unit(const Vocab& vocab, std::vector<std::string> toks, const Limits& lim) {
  if (toks.size() > lim.max_tokens) toks.resize(lim.max_tokens);  // tail-first
  return vocab.encode(toks);
}

inline std::vector<int> encode_sentence(const Vocab& vocab, const std::string& s, const Limits& lim) {
  std::vector<std::string> toks{"[CLS]"};
  for (auto& t : tokenize(s)) toks.push_back(std::move(t));
  return encode_unit(vocab, std::move(toks), lim);
}

/// Clean decoder target: content tokens followed by [EOS].
inline std::vector<int> unit_target(const std::vector<int>& unit) {
  std::vector<int> t(unit.begin() + 1, unit.end());
  t.push_back(token::eos);
  return t;
}

inline std::vector<int> encode_summary(const Vocab& vocab, const std::string& s, const Limits& lim) {
  std::vector<int> ids = vocab.encode(tokenize(s));
  if (ids.size() + 1 > lim.max_tokens) ids.resize(lim.max_tokens - 1);
  ids.push_back(token::eos);
  return ids;
}

struct EncodedDialogue {
  std::vector<std::vector<int>> utterances;  // [CLS] speaker : text
  std::vector<int> summary;                  // with [EOS]; empty when absent
};

struct EncodedPiece {
  std::vector<std::vector<int>> sentences;  // [CLS] ...
  std::vector<int> target;                  // all sentences' tokens then [EOS]
};

struct EncodedArticle {
  std::vector<std::vector<int>> sentences;
  std::vector<int> summary;
};

inline EncodedDialogue encode_dialogue(const Vocab& vocab, const Dialogue& d, const Limits& lim) {
  EncodedDialogue e;
  for (const auto& u : d.utterances) {
    if (e.utterances.size() >= lim.max_sentences) break;
    e.utterances.push_back(encode_unit(vocab, utterance_tokens(u.speaker, u.text), lim));
  }
  if (d.summary) e.summary = encode_summary(vocab, *d.summary, lim);
  return e;
}

inline EncodedPiece encode_piece(const Vocab& vocab, const TextPiece& p, const Limits& lim) {
  EncodedPiece e;
  for (const auto& s : p.sentences) {
    e.sentences.push_back(encode_sentence(vocab, s, lim));
    e.target.insert(e.target.end(), e.sentences.back().begin() + 1, e.sentences.back().end());
  }
  if (e.target.size() + 1 > lim.max_tokens) e.target.resize(lim.max_tokens - 1);
  e.target.push_back(token::eos);
  return e;
}

inline EncodedArticle encode_article(const Vocab& vocab, const ArticleSummary& a, const Limits& lim) {
  EncodedArticle e;
  for (const auto& s : a.article_sentences) {
    if (e.sentences.size() >= lim.max_sentences) break;
    e.sentences.push_back(encode_sentence(vocab, s, lim));
  }
  e.summary = encode_summary(vocab, a.summary, lim);
  return e;
}

// ---------------------------------------------------------------------------
// Noise

struct NoisedSequence {
  std::vector<int> noisy;
  std::vector<int> clean;
  std::vector<std::size_t> mask_positions;
  bool untouched = false;
};

struct NoiseConfig {
  double unit_keep_prob = 0.20;
  double mask_rate = 0.15;
};

inline double uniform01(std::mt19937_64& rng) { return std::generate_canonical<double, 53>(rng); }

/// Leaves the unit intact with probability unit_keep_prob; otherwise masks each
/// non-[CLS] token independently with probability mask_rate.
inline NoisedSequence add_noise(const std::vector<int>& seq, std::mt19937_64& rng,
                                const NoiseConfig& cfg = {}) {
  NoisedSequence n;
  n.clean = seq;
  n.noisy = seq;
  n.untouched = uniform01(rng) < cfg.unit_keep_prob;
  if (n.untouched) return n;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] == token::cls) continue;
    if (uniform01(rng) < cfg.mask_rate) {
      n.noisy[i] = token::mask;
      n.mask_positions.push_back(i);
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// Short-text truncation

/// Splits a document into consecutive pieces of one or two sentences, each size
/// drawn uniformly.
inline std::vector<TextPiece> truncate_pieces(const std::vector<std::string>& sentences, std::mt19937_64& rng) {
  if (sentences.empty()) fail(ErrorKind::data, "truncate_pieces: empty document");
  std::vector<TextPiece> out;
  std::size_t i = 0;
  while (i < sentences.size()) {
    std::size_t take = uniform01(rng) < 0.5 ? 1 : 2;
    take = std::min(take, sentences.size() - i);
    out.push_back({{sentences.begin() + i, sentences.begin() + i + take}});
    i += take;
  }
  return out;
}

/// Keeps 1–2 sentence records as they are and truncates longer ones.
inline std::vector<TextPiece> pieces_from_records(const std::vector<std::vector<std::string>>& records,
                                                  std::mt19937_64& rng) {
  std::vector<TextPiece> out;
  for (const auto& r : records) {
    if (r.size() <= 2) {
      out.push_back({r});
    } else {
      auto ps = truncate_pieces(r, rng);
      out.insert(out.end(), ps.begin(), ps.end());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mixed stream

enum class Source : int { dialogue = 0, shorttext = 1, article = 2 };

inline const char* source_name(Source s) {
  switch (s) {
    case Source::dialogue: return "dialogue";
    case Source::shorttext: return "shorttext";
    case Source::article: return "article";
  }
  return "?";
}

/// One batch of record indices from every source.
struct StepTriple {
  std::size_t step = 0;
  std::array<std::vector<std::size_t>, 3> batches;
  const std::vector<std::size_t>& of(Source s) const { return batches[static_cast<int>(s)]; }
};

/// Batches drawn from one record set without replacement. Position p maps to
/// shuffle(seed, stream, epoch = p / n)[p % n], so the state is the step count
/// alone and resuming at any step reproduces the same batches.
class EpochSampler {
 public:
  EpochSampler(std::size_t size, std::size_t batch_size, std::uint64_t seed, std::uint32_t stream = 0)
      : size_(size), batch_(batch_size), seed_(seed), stream_(stream) {
    if (size_ == 0) fail(ErrorKind::config, "sampler: empty record set");
    if (batch_ == 0) fail(ErrorKind::config, "sampler: batch size must be positive");
  }

  std::vector<std::size_t> at(std::size_t step) const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < batch_; ++k) {
      const std::size_t pos = step * batch_ + k;
      out.push_back(permutation(pos / size_)[pos % size_]);
    }
    return out;
  }

 private:
  const std::vector<std::size_t>& permutation(std::size_t epoch) const {
    if (epoch != epoch_ || perm_.empty()) {
      perm_.resize(size_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      std::seed_seq seq{std::uint32_t(seed_), std::uint32_t(seed_ >> 32), stream_, std::uint32_t(epoch),
                        std::uint32_t(epoch >> 32)};
      std::mt19937_64 rng(seq);
      for (std::size_t i = perm_.size(); i > 1; --i) {
        const std::size_t j = rng() % i;
        std::swap(perm_[i - 1], perm_[j]);
      }
      epoch_ = epoch;
    }
    return perm_;
  }

  std::size_t size_, batch_;
  std::uint64_t seed_;
  std::uint32_t stream_;
  mutable std::size_t epoch_ = 0;
  mutable std::vector<std::size_t> perm_;
};

/// Deterministic 1:1:1 stream: one batch from every source per step.
class MixedStream {
 public:
  MixedStream(std::array<std::size_t, 3> sizes, std::size_t batch_size, std::uint64_t seed)
      : samplers_(make(sizes, batch_size, seed)) {}

  StepTriple at(std::size_t step) const {
    StepTriple t;
    t.step = step;
    for (int s = 0; s < 3; ++s) t.batches[s] = samplers_[s].at(step);
    return t;
  }

  StepTriple next() { return at(cursor_++); }
  std::size_t cursor() const { return cursor_; }
  void seek(std::size_t step) { cursor_ = step; }

 private:
  static std::vector<EpochSampler> make(std::array<std::size_t, 3> sizes, std::size_t batch, std::uint64_t seed) {
    std::vector<EpochSampler> out;
    for (int s = 0; s < 3; ++s) {
      if (sizes[s] == 0)
        fail(ErrorKind::config, std::string("mixed stream: source '") + source_name(Source(s)) + "' is empty");
      if (batch == 0) fail(ErrorKind::config, "mixed stream: batch size must be positive");
      out.emplace_back(sizes[s], batch, seed, std::uint32_t(s));
    }
    return out;
  }

  std::vector<EpochSampler> samplers_;
  std::size_t cursor_ = 0;
};

}  // namespace dams
