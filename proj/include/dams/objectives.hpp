#pragma once

// The three pretraining objectives, the adversarial critic losses, and the
// fine-tuning objective, each over a batch of encoded records.

#include <optional>
#include <random>
#include <vector>

#include "dams/corpus.hpp"
#include "dams/nn.hpp"

namespace dams {

struct RecOutput {
  Tensor<real> loss;
  Tensor<real> cls;  // one row per utterance, dialogue encoder
};

struct GenOutput {
  Tensor<real> loss;
  Tensor<real> memories;  // sentence_hier outputs, one row per sentence
};

struct SummOutput {
  Tensor<real> loss;
  Tensor<real> cls;       // dialogue encoder, one row per sentence
  Tensor<real> memories;  // bridge_hier outputs
  Tensor<real> logits;    // decoder rows, packed like the targets
};

/// Utterance reconstruction: noised utterance → dialogue encoder [CLS] →
/// conditional decoder → clean utterance. Mean over utterances of the
/// per-utterance mean NLL.
inline RecOutput rec_loss(const DamsModel& model, const std::vector<const EncodedDialogue*>& batch,
                          std::mt19937_64& noise_rng, const Mode& mode, const NoiseConfig& noise = {}) {
  Packed noisy, targets;
  for (const auto* d : batch)
    for (const auto& u : d->utterances) {
      NoisedSequence n = add_noise(u, noise_rng, noise);
      noisy.push(n.noisy);
      targets.push(unit_target(n.clean));
    }
  if (noisy.count() == 0) fail(ErrorKind::invalid_batch, "rec_loss: no utterances");
  Tensor<real> cls = model.encode_cls(EncoderId::dialogue, noisy, mode);
  Tensor<real> logits = model.utterance_logits(cls, shift_right(targets, token::bos), mode);
  return {sequence_mean_nll(logits, targets), cls};
}

/// Shared tail of the sentence-level pipelines: hierarchical encoder over
/// per-document [CLS] rows, then the summary decoder.
inline Tensor<real> decode_from_sentences(const DamsModel& model, HierId hier, const Tensor<real>& cls,
                                          const std::vector<std::size_t>& sentence_offsets,
                                          const Packed& targets, const Mode& mode, Tensor<real>* memories_out,
                                          Tensor<real>* logits_out = nullptr) {
  Tensor<real> memories = model.hier_packed(hier, cls, sentence_offsets, mode);
  Packed inputs = shift_right(targets, token::bos);
  AttnLayout layout = DamsModel::memory_layout(inputs.offsets, sentence_offsets);
  Tensor<real> logits = model.summary_logits(memories, layout, inputs, mode);
  if (memories_out) *memories_out = memories;
  if (logits_out) *logits_out = logits;
  return sequence_mean_nll(logits, targets);
}

/// Summary-style language modelling on noised short-text pieces:
/// sentence encoder → sentence_hier → summary decoder → whole clean piece.
inline GenOutput gen_loss(const DamsModel& model, const std::vector<const EncodedPiece*>& batch,
                          std::mt19937_64& noise_rng, const Mode& mode, const NoiseConfig& noise = {}) {
  Packed noisy, targets;
  std::vector<std::size_t> offsets{0};
  for (const auto* p : batch) {
    for (const auto& s : p->sentences) noisy.push(add_noise(s, noise_rng, noise).noisy);
    offsets.push_back(noisy.count());
    targets.push(p->target);
  }
  if (noisy.count() == 0) fail(ErrorKind::invalid_batch, "gen_loss: no sentences");
  Tensor<real> cls = model.encode_cls(EncoderId::sentence, noisy, mode);
  GenOutput out;
  out.loss = decode_from_sentences(model, HierId::sentence, cls, offsets, targets, mode, &out.memories);
  return out;
}

/// End-to-end summarization through the bridge: dialogue encoder →
/// bridge_hier → summary decoder. Used for articles and for dialogues at
/// fine-tune time (utterances as the sentence units).
inline SummOutput summarize_units(const DamsModel& model, const std::vector<const std::vector<std::vector<int>>*>& docs,
                                  const std::vector<const std::vector<int>*>& summaries, const Mode& mode) {
  Packed sents, targets;
  std::vector<std::size_t> offsets{0};
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (docs[i]->empty()) fail(ErrorKind::invalid_batch, "summarize: document without sentences");
    for (const auto& s : *docs[i]) sents.push(s);
    offsets.push_back(sents.count());
    if (summaries[i]->empty()) fail(ErrorKind::invalid_batch, "summarize: empty target summary");
    targets.push(*summaries[i]);
  }
  SummOutput out;
  out.cls = model.encode_cls(EncoderId::dialogue, sents, mode);
  out.loss = decode_from_sentences(model, HierId::bridge, out.cls, offsets, targets, mode, &out.memories, &out.logits);
  return out;
}

inline SummOutput summ_loss(const DamsModel& model, const std::vector<const EncodedArticle*>& batch,
                            const Mode& mode) {
  std::vector<const std::vector<std::vector<int>>*> docs;
  std::vector<const std::vector<int>*> sums;
  for (const auto* a : batch) {
    docs.push_back(&a->sentences);
    sums.push_back(&a->summary);
  }
  return summarize_units(model, docs, sums, mode);
}

/// Single-document form of the bridge pipeline.
inline SummOutput summarize_forward(const DamsModel& model, const std::vector<std::vector<int>>& document_sentences,
                                    const std::vector<int>& target_summary, const Mode& mode) {
  return summarize_units(model, {&document_sentences}, {&target_summary}, mode);
}

/// Class-balanced logistic loss: label 0 for `negatives`, 1 for `positives`;
/// each class contributes half of the loss. Reversal is applied inside the
/// critic so upstream encoders see the negated gradient.
inline std::optional<Tensor<real>> critic_loss(const DamsModel& model, CriticId which, const Tensor<real>& negatives,
                                               const Tensor<real>& positives, bool reverse = true) {
  if (!negatives.defined() || !positives.defined() || negatives.rows() == 0 || positives.rows() == 0)
    return std::nullopt;
  Tensor<real> logits = model.critic_logits(which, concat_rows<real>({negatives, positives}), reverse);
  const std::size_t n0 = negatives.rows(), n1 = positives.rows();
  std::vector<int> labels(n0 + n1, 0);
  std::vector<real> w(n0 + n1, real(0.5) / real(n0));
  for (std::size_t i = n0; i < n0 + n1; ++i) {
    labels[i] = 1;
    w[i] = real(0.5) / real(n1);
  }
  return weighted_bce_with_logits<real>(logits, labels, w);
}

struct CriticLosses {
  std::optional<Tensor<real>> de, dg;
};

/// D_e: dialogue utterance [CLS] (0) vs news sentence [CLS] (1).
/// D_g: short-text memories (0) vs news memories (1).
inline CriticLosses critic_losses(const DamsModel& model, const Tensor<real>& dialogue_cls,
                                  const Tensor<real>& news_cls, const Tensor<real>& short_mem,
                                  const Tensor<real>& news_mem) {
  return {critic_loss(model, CriticId::e, dialogue_cls, news_cls),
          critic_loss(model, CriticId::g, short_mem, news_mem)};
}

}  // namespace dams
