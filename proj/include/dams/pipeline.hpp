#pragma once

// Glue shared by the command-line tool and the end-to-end checks: vocabulary
// construction, vocabulary embedded in checkpoints, dev decoding and the
// domain-probe units.

#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dams/checkpoint.hpp"
#include "dams/evalkit.hpp"
#include "dams/finetune.hpp"
#include "dams/pretrain.hpp"
#include "dams/synthetic.hpp"

namespace dams {

/// Token streams of every text a run may see; the vocabulary is built from all
/// of them so scratch and pretrained models share ids.
inline std::vector<std::vector<std::string>> vocab_streams(const std::vector<Dialogue>& dialogues,
                                                           const std::vector<TextPiece>& pieces,
                                                           const std::vector<ArticleSummary>& articles,
                                                           const std::vector<Dialogue>& finetune) {
  std::vector<std::vector<std::string>> streams;
  auto add_dialogue = [&](const Dialogue& d) {
    for (const auto& u : d.utterances) streams.push_back(utterance_tokens(u.speaker, u.text));
    if (d.summary) streams.push_back(tokenize(*d.summary));
  };
  for (const auto& d : dialogues) add_dialogue(d);
  for (const auto& p : pieces)
    for (const auto& s : p.sentences) streams.push_back(tokenize(s));
  for (const auto& a : articles) {
    for (const auto& s : a.article_sentences) streams.push_back(tokenize(s));
    streams.push_back(tokenize(a.summary));
  }
  for (const auto& d : finetune) add_dialogue(d);
  return streams;
}

/// Dev pairs drawn from their own generator, so they never overlap the
/// training draw of the same seed; the world (companions) is shared.
inline std::vector<Dialogue> generate_dev(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed) {
  SyntheticSpec dev_spec{1, 1, 1, n, spec.world_seed};
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), 0xde7u};
  std::mt19937_64 rng(seq);
  return generate_synthetic(dev_spec, rng).finetune;
}

inline void embed_vocab(Checkpoint& ck, const Vocab& vocab) {
  std::string joined;
  for (const auto& t : vocab.tokens()) {
    if (!joined.empty()) joined += ' ';
    joined += t;
  }
  ck.config["vocab.tokens"] = joined;
}

inline Vocab vocab_of(const Checkpoint& ck) {
  std::istringstream is(ck.get("vocab.tokens"));
  std::vector<std::string> tokens;
  for (std::string t; is >> t;) tokens.push_back(t);
  Vocab v = Vocab::from_tokens(tokens, "checkpoint vocabulary");
  if (std::to_string(v.size()) != ck.get("model.vocab_size"))
    throw CheckpointError(CheckpointError::Code::shape_mismatch, "checkpoint vocabulary size disagrees with the model");
  return v;
}

/// Runs f(i) for i in [0, n) on up to `threads` workers. Each index writes its
/// own slot, so results do not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) f(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Beam-search summaries in input order.
inline std::vector<std::string> summarize_all(const DamsModel& model, const Vocab& vocab,
                                              const std::vector<Dialogue>& dialogues, const DecodeConfig& cfg,
                                              const Limits& lim, std::size_t threads) {
  std::vector<std::string> out(dialogues.size());
  parallel_for(dialogues.size(), threads, [&](std::size_t i) { out[i] = summarize(model, vocab, dialogues[i], cfg, lim); });
  return out;
}

/// ROUGE of decoded summaries against the references of `dev`.
inline RougeReport dev_rouge(const DamsModel& model, const Vocab& vocab, const std::vector<Dialogue>& dev,
                             const DecodeConfig& cfg, const Limits& lim, std::size_t threads) {
  const auto hyps = summarize_all(model, vocab, dev, cfg, lim, threads);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    if (!dev[i].summary) fail(ErrorKind::data, "dev dialogue " + std::to_string(i + 1) + " lacks a summary");
    pairs.push_back({hyps[i], *dev[i].summary});
  }
  return corpus_rouge(pairs);
}

/// Probe units: the first `n` dialogue utterances and the first `n` article
/// sentences, one per record, as [CLS]-prefixed id sequences.
struct ProbeUnits {
  std::vector<std::vector<int>> dialogue, article;
};

inline ProbeUnits probe_units(const Vocab& vocab, const std::vector<Dialogue>& dialogues,
                              const std::vector<ArticleSummary>& articles, std::size_t n, const Limits& lim) {
  ProbeUnits u;
  for (const auto& d : dialogues) {
    if (u.dialogue.size() == n) break;
    if (!d.utterances.empty()) u.dialogue.push_back(encode_dialogue(vocab, d, lim).utterances.front());
  }
  for (const auto& a : articles) {
    if (u.article.size() == n) break;
    if (!a.article_sentences.empty()) u.article.push_back(encode_sentence(vocab, a.article_sentences.front(), lim));
  }
  return u;
}

}  // namespace dams
