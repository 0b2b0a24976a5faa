#pragma once

// Run configuration: plain-text `key = value` files with # comments, flag
// overrides (flag > file > default), typed accessors and a resolved echo.

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dams/evalkit.hpp"
#include "dams/finetune.hpp"
#include "dams/pretrain.hpp"
#include "dams/synthetic.hpp"

namespace dams {

class RunConfig {
 public:
  RunConfig() {
    def("seed", "1");
    def("out", "out");
    def("threads", "1");
    def("from_checkpoint", "");

    def("model.preset", "toy");
    for (const char* k : {"layers", "heads", "model_dim", "ffn_dim", "max_positions", "max_sentences", "dropout", "init_std"})
      def(std::string("model.") + k, "preset");

    def("vocab.max_size", "2000");
    def("limits.max_tokens", "64");
    def("limits.max_sentences", "24");

    def("synth.dialogues", "4000");
    def("synth.shorttexts", "4000");
    def("synth.articles", "4000");
    def("synth.finetune", "400");
    def("synth.dev", "200");
    def("synth.world_seed", "1");

    def("data.dialogues", "data/dialogues.jsonl");
    def("data.shorttexts", "data/shorttexts.jsonl");
    def("data.articles", "data/articles.jsonl");
    def("data.finetune", "data/finetune.jsonl");
    def("data.dev", "data/dev.jsonl");

    const TrainConfig t;
    def("train.steps", std::to_string(t.steps));
    def("train.warmup", std::to_string(t.warmup));
    def("train.batch_size", std::to_string(t.batch_size));
    def("train.alpha", fmt(t.alpha));
    def("train.lr", fmt(t.lr));
    for (Group g : kAllGroups)
      def("train.lr." + std::string(group_name(g)), t.group_lr.count(g) ? fmt(t.group_lr.at(g)) : "default");
    def("train.clip_norm", fmt(t.clip_norm));
    def("train.log_interval", std::to_string(t.log_interval));
    def("train.checkpoint_interval", std::to_string(t.checkpoint_interval));
    def("train.sources", "dialogue,shorttext,article");
    def("train.critics", "e,g");
    def("train.noise_keep", fmt(t.noise.unit_keep_prob));
    def("train.noise_mask", fmt(t.noise.mask_rate));

    const FinetuneConfig f;
    def("finetune.steps", std::to_string(f.steps));
    def("finetune.warmup", std::to_string(f.warmup));
    def("finetune.batch_size", std::to_string(f.batch_size));
    def("finetune.lr", fmt(f.lr));
    def("finetune.clip_norm", fmt(f.clip_norm));
    def("finetune.train_fraction", fmt(f.train_fraction));
    def("finetune.eval_interval", std::to_string(f.eval_interval));

    const DecodeConfig d;
    def("decode.beam_size", std::to_string(d.beam_size));
    def("decode.min_length", std::to_string(d.min_length));
    def("decode.max_length", std::to_string(d.max_length));
    def("decode.length_mode", "normalized");
    def("decode.length_penalty", fmt(d.length_penalty));

    def("probe.units", "300");
    def("probe.epochs", "200");
    def("probe.test_fraction", "0.2");

    if (const char* env = std::getenv("DAMS_THREADS"); env && *env) values_["threads"] = {env, "env"};
  }

  /// Reads `key = value` lines; blank lines and # comments are skipped.
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::config, "cannot open config file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string where = path + ":" + std::to_string(lineno);
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail(ErrorKind::config, where + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      if (!values_.count(key)) fail(ErrorKind::config, where + ": unknown key '" + key + "'");
      if (file_keys_.count(key)) fail(ErrorKind::config, where + ": duplicate key '" + key + "'");
      file_keys_.insert({key, lineno});
      values_[key] = {trim(line.substr(eq + 1)), where};
    }
  }

  void set(const std::string& key, const std::string& value, const std::string& origin = "flag") {
    if (!values_.count(key)) fail(ErrorKind::config, "unknown key '" + key + "' (" + origin + ")");
    values_[key] = {value, origin};
  }

  /// `key=value` as given on the command line.
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::config, "--set expects key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorKind::usage, "config: no key '" + key + "'");
    return it->second.value;
  }

  double num(const std::string& key) const {
    const std::string& v = str(key);
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || !std::isfinite(x))
      fail(ErrorKind::config, key + ": expected a number, got '" + v + "' (" + origin(key) + ")");
    return x;
  }

  std::size_t count(const std::string& key) const {
    const double x = num(key);
    if (x < 0 || x != std::floor(x))
      fail(ErrorKind::config, key + ": expected a non-negative integer, got '" + str(key) + "'");
    return static_cast<std::size_t>(x);
  }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(count("seed")); }

  const std::string& origin(const std::string& key) const { return values_.at(key).origin; }

  /// Every key with its resolved value, sorted; loading it reproduces the run.
  std::string resolved() const {
    std::ostringstream os;
    os << "# resolved configuration\n";
    for (const auto& [k, v] : values_) os << k << " = " << v.value << '\n';
    return os.str();
  }

  // --- typed views ----------------------------------------------------------

  BlockConfig block() const {
    const std::string& preset = str("model.preset");
    BlockConfig c;
    if (preset == "toy")
      c = BlockConfig::toy();
    else if (preset == "paper")
      c = BlockConfig::paper();
    else
      fail(ErrorKind::config, "model.preset: expected toy or paper, got '" + preset + "'");
    auto over = [&](const char* k, int& field) {
      const std::string key = std::string("model.") + k;
      if (str(key) != "preset") field = static_cast<int>(count(key));
    };
    over("layers", c.layers);
    over("heads", c.heads);
    over("model_dim", c.model_dim);
    over("ffn_dim", c.ffn_dim);
    over("max_positions", c.max_positions);
    over("max_sentences", c.max_sentences);
    if (str("model.dropout") != "preset") c.dropout = num("model.dropout");
    if (str("model.init_std") != "preset") c.init_std = num("model.init_std");
    c.validate();
    return c;
  }

  Limits limits() const { return {count("limits.max_tokens"), count("limits.max_sentences")}; }

  SyntheticSpec synth() const {
    SyntheticSpec s;
    s.dialogues = count("synth.dialogues");
    s.shorttexts = count("synth.shorttexts");
    s.articles = count("synth.articles");
    s.finetune = count("synth.finetune");
    s.world_seed = count("synth.world_seed");
    return s;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.steps = count("train.steps");
    t.warmup = count("train.warmup");
    t.batch_size = count("train.batch_size");
    t.alpha = num("train.alpha");
    t.lr = num("train.lr");
    for (Group g : kAllGroups) {
      const std::string key = "train.lr." + std::string(group_name(g));
      if (str(key) == "default") t.group_lr.erase(g);
      else t.group_lr[g] = num(key);
    }
    t.clip_norm = num("train.clip_norm");
    t.seed = seed();
    t.log_interval = count("train.log_interval");
    t.checkpoint_interval = count("train.checkpoint_interval");
    t.sources = {false, false, false};
    for (const auto& s : split(str("train.sources"))) {
      if (s == "dialogue") t.sources[0] = true;
      else if (s == "shorttext") t.sources[1] = true;
      else if (s == "article") t.sources[2] = true;
      else fail(ErrorKind::config, "train.sources: unknown source '" + s + "'");
    }
    t.critic_e = t.critic_g = false;
    for (const auto& s : split(str("train.critics"))) {
      if (s == "e") t.critic_e = true;
      else if (s == "g") t.critic_g = true;
      else if (s != "none") fail(ErrorKind::config, "train.critics: unknown critic '" + s + "'");
    }
    t.noise.unit_keep_prob = num("train.noise_keep");
    t.noise.mask_rate = num("train.noise_mask");
    if (t.log_interval == 0) fail(ErrorKind::config, "train.log_interval must be positive");
    t.validate();
    return t;
  }

  FinetuneConfig finetune() const {
    FinetuneConfig f;
    f.steps = count("finetune.steps");
    f.warmup = count("finetune.warmup");
    f.batch_size = count("finetune.batch_size");
    f.lr = num("finetune.lr");
    f.clip_norm = num("finetune.clip_norm");
    f.train_fraction = num("finetune.train_fraction");
    f.seed = seed();
    f.eval_interval = count("finetune.eval_interval");
    if (f.eval_interval == 0) fail(ErrorKind::config, "finetune.eval_interval must be positive");
    f.validate();
    return f;
  }

  DecodeConfig decode() const {
    DecodeConfig d;
    d.beam_size = count("decode.beam_size");
    d.min_length = count("decode.min_length");
    d.max_length = count("decode.max_length");
    const std::string& mode = str("decode.length_mode");
    if (mode == "normalized") d.length_mode = LengthMode::normalized;
    else if (mode == "none") d.length_mode = LengthMode::none;
    else fail(ErrorKind::config, "decode.length_mode: expected normalized or none, got '" + mode + "'");
    d.length_penalty = num("decode.length_penalty");
    d.validate();
    return d;
  }

  ProbeConfig probe() const {
    ProbeConfig p;
    p.epochs = count("probe.epochs");
    p.test_fraction = num("probe.test_fraction");
    if (!(p.test_fraction > 0 && p.test_fraction < 1)) fail(ErrorKind::config, "probe.test_fraction must lie in (0,1)");
    return p;
  }

  static std::string fmt(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
  }

 private:
  struct Entry {
    std::string value;
    std::string origin;
  };

  void def(const std::string& key, const std::string& value) { values_[key] = {value, "default"}; }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
      if (!trim(item).empty()) out.push_back(trim(item));
    return out;
  }

  std::map<std::string, Entry> values_;
  std::map<std::string, std::size_t> file_keys_;
};

}  // namespace dams
