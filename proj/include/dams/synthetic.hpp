#pragma once

// Template-generated stand-ins for the four corpora.
//
// Every record revolves around a fact (person, verb, object, place, time).
// Dialogues state a fact informally in one salient utterance among chit-chat;
// articles state one in a formal salient sentence among filler; short texts
// describe facts in the daily-life style of dialogue summaries. Dialogue
// summaries follow that same style and additionally name the person's fixed
// companion ("with her sister"), which appears only in short texts and
// summaries. Dialogue and article text draw function words from disjoint sets.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dams/corpus.hpp"

namespace dams {

struct SyntheticSpec {
  std::size_t dialogues = 4000;
  std::size_t shorttexts = 4000;
  std::size_t articles = 4000;
  std::size_t finetune = 400;
  std::uint64_t world_seed = 1;  // fixes companions; shared by train and dev draws
};

struct SyntheticCorpora {
  std::vector<Dialogue> dialogues;
  std::vector<TextPiece> shorttexts;
  std::vector<ArticleSummary> articles;
  std::vector<Dialogue> finetune;
};

struct Fact {
  std::size_t person = 0, verb = 0, object = 0, place = 0, time = 0;
};

class SyntheticWorld {
 public:
  static inline const std::vector<std::string> kPeople = {
      "anna", "ben",  "carla", "dave", "emma", "frank", "gina", "hugo", "iris", "jack",
      "kate", "leo",  "mia",   "nick", "olga", "paul",  "rita", "sam",  "tina", "umar",
      "vera", "walt", "xena",  "yuri", "zoe",  "adam",  "bella", "chris", "dina", "eric"};
  static inline const std::vector<std::string> kVerbs = {"buy",    "sell",  "paint", "fix",  "clean",
                                                         "wash",   "borrow", "return", "pack", "order",
                                                         "rent",   "share", "carry", "test", "check"};
  static inline const std::vector<std::string> kObjects = {
      "bike", "car",  "cake",    "laptop", "sofa", "camera", "guitar", "phone",  "lamp",   "tent",
      "boat", "table", "printer", "oven",  "kettle", "piano", "jacket", "ladder", "drone", "scooter"};
  static inline const std::vector<std::string> kPlaces = {"market", "garage", "park",   "office", "library",
                                                          "station", "mall",  "beach",  "school", "gym",
                                                          "cafe",   "harbor", "museum", "bakery", "clinic"};
  static inline const std::vector<std::string> kTimes = {"tomorrow", "tonight",  "monday", "tuesday",
                                                         "wednesday", "thursday", "friday", "saturday",
                                                         "sunday",   "later"};
  static inline const std::vector<std::string> kCompanions = {"sister", "brother", "mom",   "dad",
                                                              "cousin", "neighbor", "friend", "boss",
                                                              "uncle",  "aunt",    "coach", "roommate"};

  explicit SyntheticWorld(std::uint64_t world_seed) {
    std::mt19937_64 rng(world_seed * 0x9E3779B97F4A7C15ULL + 17);
    for (std::size_t i = 0; i < kPeople.size(); ++i) companion_.push_back(rng() % kCompanions.size());
  }

  static bool is_female(std::size_t person) {
    static const std::array<bool, 30> female = {true,  false, true,  false, true, false, true,  false,
                                                true,  false, true,  false, true, false, true,  false,
                                                true,  false, true,  false, true, false, true,  false,
                                                true,  false, true,  false, true, false};
    return female[person];
  }

  std::string companion_phrase(std::size_t person) const {
    return std::string("with ") + (is_female(person) ? "her " : "his ") + kCompanions[companion_[person]];
  }

  /// Daily-life summary of a fact, the style of dialogue summaries.
  std::string summary_sentence(const Fact& f) const {
    return kPeople[f.person] + " will " + kVerbs[f.verb] + " the " + kObjects[f.object] + " at the " +
           kPlaces[f.place] + " " + kTimes[f.time] + " " + companion_phrase(f.person) + " .";
  }

  static std::string headline(const Fact& f) {
    return kPeople[f.person] + " to " + kVerbs[f.verb] + " " + kObjects[f.object] + " at " + kPlaces[f.place] +
           " " + kTimes[f.time];
  }

  static Fact random_fact(std::mt19937_64& rng) {
    return {pick(rng, kPeople.size()), pick(rng, kVerbs.size()), pick(rng, kObjects.size()),
            pick(rng, kPlaces.size()), pick(rng, kTimes.size())};
  }

  // --- dialogues -----------------------------------------------------------

  static std::string salient_utterance(const Fact& f, std::mt19937_64& rng) {
    const std::string core = kVerbs[f.verb] + " " + kObjects[f.object] + " @ " + kPlaces[f.place] + " " +
                             kTimes[f.time];
    switch (pick(rng, 4)) {
      case 0: return "btw i gonna " + core + " lol";
      case 1: return "i wanna " + core + " !";
      case 2: return "gonna " + core + " haha";
      default: return "omg i gonna " + core;
    }
  }

  static std::string chitchat(std::size_t other, std::mt19937_64& rng, std::size_t avoid_object) {
    std::size_t obj = pick(rng, kObjects.size());
    if (obj == avoid_object) obj = (obj + 1) % kObjects.size();
    switch (pick(rng, 12)) {
      case 0: return "hey " + kPeople[other] + " !";
      case 1: return "lol ok";
      case 2: return "haha yeah";
      case 3: return "omg cool";
      case 4: return "u there ?";
      case 5: return "yep sure";
      case 6: return "nope lol";
      case 7: return "thx !";
      case 8: return "btw how r u ?";
      case 9: return "omg ur " + kObjects[obj] + " is cool";
      case 10: return "k see ya";
      default: return "wanna come ?";
    }
  }

  /// Two speakers; the first speaker states the fact (person = speaker).
  Dialogue dialogue(const Fact& f, std::mt19937_64& rng, bool with_summary) const {
    std::size_t other = pick(rng, kPeople.size());
    if (other == f.person) other = (other + 1) % kPeople.size();
    const std::size_t turns = 3 + pick(rng, 4);
    const std::size_t salient_at = pick(rng, turns);
    Dialogue d;
    for (std::size_t t = 0; t < turns; ++t) {
      // speakers alternate; the salient turn belongs to the fact's person
      const bool fact_speaker = ((t + salient_at) % 2 == 0);
      const std::size_t spk = fact_speaker ? f.person : other;
      const std::size_t addressee = fact_speaker ? other : f.person;
      d.utterances.push_back({kPeople[spk], t == salient_at ? salient_utterance(f, rng)
                                                             : chitchat(addressee, rng, f.object)});
    }
    if (with_summary) d.summary = summary_sentence(f);
    return d;
  }

  // --- articles ------------------------------------------------------------

  static std::string salient_sentence(const Fact& f, std::mt19937_64& rng) {
    const std::string core = kPeople[f.person] + " will " + kVerbs[f.verb] + " the " + kObjects[f.object] +
                             " at the " + kPlaces[f.place] + " " + kTimes[f.time];
    switch (pick(rng, 3)) {
      case 0: return "according to a statement , " + core + " , officials confirmed .";
      case 1: return core + " , the spokesperson announced .";
      default: return "officials reported that " + core + " .";
    }
  }

  static std::string filler_sentence(std::mt19937_64& rng, std::size_t avoid_object) {
    std::size_t obj = pick(rng, kObjects.size());
    if (obj == avoid_object) obj = (obj + 1) % kObjects.size();
    const std::string& place = kPlaces[pick(rng, kPlaces.size())];
    switch (pick(rng, 8)) {
      case 0: return "the council approved the annual budget , according to officials .";
      case 1: return "authorities announced new regulations for the " + place + " district .";
      case 2: return "the ministry said the " + kObjects[obj] + " industry remains stable .";
      case 3: return "residents expressed concern regarding the " + place + " .";
      case 4: return "meanwhile , the committee postponed its decision .";
      case 5: return "a spokesperson declined to comment further .";
      case 6: return "the report noted a modest increase in " + kObjects[obj] + " prices .";
      default: return "critics argued that the proposal lacked detail .";
    }
  }

  ArticleSummary article(const Fact& f, std::mt19937_64& rng) const {
    const std::size_t n = 4 + pick(rng, 7);
    const std::size_t salient_at = pick(rng, n);
    ArticleSummary a;
    for (std::size_t i = 0; i < n; ++i)
      a.article_sentences.push_back(i == salient_at ? salient_sentence(f, rng) : filler_sentence(rng, f.object));
    a.summary = headline(f);
    return a;
  }

  // --- short texts ---------------------------------------------------------

  std::string story_sentence(std::mt19937_64& rng) const {
    const Fact f = random_fact(rng);
    const std::string& p = kPeople[f.person];
    const std::string& q = kPeople[pick(rng, kPeople.size())];
    switch (pick(rng, 5)) {
      case 0:
      case 1: return summary_sentence(f);
      case 2: return p + " is happy with the new " + kObjects[f.object] + " .";
      case 3: return p + " met " + q + " at the " + kPlaces[f.place] + " " + kTimes[f.time] + " .";
      default: return p + " went to the " + kPlaces[f.place] + " " + companion_phrase(f.person) + " .";
    }
  }

  std::vector<std::string> story(std::mt19937_64& rng) const {
    const std::size_t n = 3 + pick(rng, 6);
    std::vector<std::string> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(story_sentence(rng));
    return s;
  }

  // --- oracle --------------------------------------------------------------

  /// Recovers the fact from a dialogue's salient utterance by lexicon lookup.
  static std::optional<Fact> extract_fact(const Dialogue& d) {
    for (const auto& u : d.utterances) {
      auto toks = tokenize(u.text);
      auto person = index_of(kPeople, tokenize(u.speaker).empty() ? "" : tokenize(u.speaker)[0]);
      for (std::size_t i = 0; i + 4 < toks.size(); ++i) {
        auto v = index_of(kVerbs, toks[i]);
        auto o = index_of(kObjects, toks[i + 1]);
        auto pl = index_of(kPlaces, toks[i + 3]);
        auto tm = index_of(kTimes, toks[i + 4]);
        if (person && v && o && toks[i + 2] == "@" && pl && tm) return Fact{*person, *v, *o, *pl, *tm};
      }
    }
    return std::nullopt;
  }

 private:
  static std::size_t pick(std::mt19937_64& rng, std::size_t n) { return rng() % n; }

  static std::optional<std::size_t> index_of(const std::vector<std::string>& list, const std::string& tok) {
    for (std::size_t i = 0; i < list.size(); ++i)
      if (list[i] == tok) return i;
    return std::nullopt;
  }

  std::vector<std::size_t> companion_;
};

inline SyntheticCorpora generate_synthetic(const SyntheticSpec& spec, std::mt19937_64& rng) {
  if (spec.dialogues == 0 || spec.shorttexts == 0 || spec.articles == 0 || spec.finetune == 0)
    fail(ErrorKind::config, "synthetic corpus sizes must be positive");
  SyntheticWorld world(spec.world_seed);
  SyntheticCorpora c;
  for (std::size_t i = 0; i < spec.dialogues; ++i)
    c.dialogues.push_back(world.dialogue(SyntheticWorld::random_fact(rng), rng, false));
  while (c.shorttexts.size() < spec.shorttexts) {
    for (auto& p : truncate_pieces(world.story(rng), rng)) {
      if (c.shorttexts.size() == spec.shorttexts) break;
      c.shorttexts.push_back(std::move(p));
    }
  }
  for (std::size_t i = 0; i < spec.articles; ++i)
    c.articles.push_back(world.article(SyntheticWorld::random_fact(rng), rng));
  for (std::size_t i = 0; i < spec.finetune; ++i)
    c.finetune.push_back(world.dialogue(SyntheticWorld::random_fact(rng), rng, true));
  return c;
}

}  // namespace dams
