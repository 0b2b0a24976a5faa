// Command-line entry point: synth | pretrain | finetune | summarize | evaluate | probe.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "dams/pipeline.hpp"
#include "dams/runconfig.hpp"
#include "dams/synthetic.hpp"

namespace fs = std::filesystem;
using namespace dams;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::optional<std::string> from_checkpoint;
  std::optional<double> train_fraction;
  std::optional<double> alpha;
  std::optional<std::string> data;
  std::vector<std::string> sets;

  // command-specific
  std::string input, output, candidates, references, reps, tag_a = "dialogue", tag_b = "article";
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key = value configuration file");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--threads", f.threads, "worker threads (default: DAMS_THREADS or 1)");
  cmd->add_option("--from-checkpoint", f.from_checkpoint, "initial checkpoint");
  cmd->add_option("--train-fraction", f.train_fraction, "fraction of fine-tune pairs to use");
  cmd->add_option("--alpha", f.alpha, "critic loss weight");
  cmd->add_option("--data", f.data, "corpus directory (sets every data.* path)");
  cmd->add_option("--set", f.sets, "override one key: --set key=value")->take_all();
}

RunConfig resolve(const Flags& f) {
  RunConfig rc;
  if (!f.config.empty()) rc.load_file(f.config);
  for (const auto& kv : f.sets) rc.set_assignment(kv);
  if (f.data)
    for (const char* name : {"dialogues", "shorttexts", "articles", "finetune", "dev"})
      rc.set(std::string("data.") + name, (fs::path(*f.data) / (std::string(name) + ".jsonl")).string());
  if (f.seed) rc.set("seed", std::to_string(*f.seed));
  if (f.out) rc.set("out", *f.out);
  if (f.threads) rc.set("threads", std::to_string(*f.threads));
  if (f.from_checkpoint) rc.set("from_checkpoint", *f.from_checkpoint);
  if (f.train_fraction) rc.set("finetune.train_fraction", RunConfig::fmt(*f.train_fraction));
  if (f.alpha) rc.set("train.alpha", RunConfig::fmt(*f.alpha));
  return rc;
}

fs::path prepare_out(const RunConfig& rc, const std::string& command) {
  const fs::path out = rc.str("out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) fail(ErrorKind::io, "cannot create output directory " + out.string());
  std::ofstream echo(out / (command + ".resolved.cfg"), std::ios::binary);
  if (!echo) fail(ErrorKind::io, "cannot write to " + out.string());
  echo << rc.resolved();
  return out;
}

std::size_t threads_of(const RunConfig& rc) {
  const std::size_t t = rc.count("threads");
  return t == 0 ? 1 : t;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + p.string());
  return os;
}

std::string fixed(double x, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

void put_limits(Checkpoint& ck, const Limits& lim) {
  ck.config["limits.max_tokens"] = std::to_string(lim.max_tokens);
  ck.config["limits.max_sentences"] = std::to_string(lim.max_sentences);
}

struct Corpora {
  std::vector<Dialogue> dialogues;
  std::vector<TextPiece> pieces;
  std::vector<ArticleSummary> articles;
  std::vector<Dialogue> finetune;
};

Corpora load_corpora(const RunConfig& rc) {
  Corpora c;
  c.dialogues = read_dialogues(rc.str("data.dialogues"));
  const auto records = read_shorttexts(rc.str("data.shorttexts"));
  std::seed_seq seq{std::uint32_t(rc.seed()), std::uint32_t(rc.seed() >> 32), 0x7e1cu};
  std::mt19937_64 rng(seq);
  c.pieces = pieces_from_records(records, rng);
  c.articles = read_articles(rc.str("data.articles"));
  c.finetune = read_dialogues(rc.str("data.finetune"), true);
  return c;
}

Vocab corpus_vocab(const RunConfig& rc, const Corpora& c) {
  return Vocab::build(vocab_streams(c.dialogues, c.pieces, c.articles, c.finetune), rc.count("vocab.max_size"));
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& rc) {
  const fs::path out = prepare_out(rc, "synth");
  const SyntheticSpec spec = rc.synth();
  std::mt19937_64 rng(rc.seed());
  const SyntheticCorpora c = generate_synthetic(spec, rng);

  const auto dev = generate_dev(spec, rc.count("synth.dev"), rc.seed());

  write_dialogues((out / "dialogues.jsonl").string(), c.dialogues);
  write_pieces((out / "shorttexts.jsonl").string(), c.shorttexts);
  write_articles((out / "articles.jsonl").string(), c.articles);
  write_dialogues((out / "finetune.jsonl").string(), c.finetune);
  write_dialogues((out / "dev.jsonl").string(), dev);

  nlohmann::ordered_json m;
  m["seed"] = rc.seed();
  m["world_seed"] = spec.world_seed;
  m["counts"] = {{"dialogues", c.dialogues.size()},
                 {"shorttexts", c.shorttexts.size()},
                 {"articles", c.articles.size()},
                 {"finetune", c.finetune.size()},
                 {"dev", dev.size()}};
  open_out(out / "manifest.json") << m.dump(2) << '\n';
  std::cout << "synth: wrote " << out.string() << " (" << c.dialogues.size() << " dialogues, " << c.shorttexts.size()
            << " short texts, " << c.articles.size() << " articles, " << c.finetune.size() << " fine-tune pairs, "
            << dev.size() << " dev pairs)\n";
  return 0;
}

int cmd_pretrain(const RunConfig& rc) {
  const TrainConfig tc = rc.train();
  const Limits lim = rc.limits();
  const fs::path out = prepare_out(rc, "pretrain");
  const Corpora c = load_corpora(rc);

  std::optional<Checkpoint> resume;
  std::unique_ptr<DamsModel> model;
  Vocab vocab;
  if (!rc.str("from_checkpoint").empty()) {
    resume = read_checkpoint(rc.str("from_checkpoint"));
    model = model_from_checkpoint(*resume);
    vocab = vocab_of(*resume);
  } else {
    vocab = corpus_vocab(rc, c);
    model = std::make_unique<DamsModel>(rc.block(), vocab.size(), rc.seed());
  }
  vocab.save((out / "vocab.txt").string());
  const PretrainData data = encode_pretrain_data(vocab, c.dialogues, c.pieces, c.articles, lim);

  Pretrainer trainer(*model, data, tc);
  if (resume) trainer.restore(*resume);
  if (trainer.step_count() >= tc.steps)
    fail(ErrorKind::config, "pretrain: checkpoint is already at step " + std::to_string(trainer.step_count()) +
                                ", train.steps is " + std::to_string(tc.steps));

  auto save = [&](const fs::path& p) {
    Checkpoint ck = trainer.checkpoint();
    embed_vocab(ck, vocab);
    put_limits(ck, lim);
    write_checkpoint(p.string(), ck);
  };

  std::ofstream log = open_out(out / "pretrain.log");
  write_log_header(log);
  LossBreakdown last;
  while (trainer.step_count() < tc.steps) {
    last = trainer.step();
    if (last.step % tc.log_interval == 0 || last.step == tc.steps) {
      write_log_line(log, last);
      log.flush();
    }
    if (tc.checkpoint_interval && last.step % tc.checkpoint_interval == 0 && last.step != tc.steps)
      save(out / ("checkpoint-" + std::to_string(last.step) + ".ckpt"));
  }
  save(out / "model.ckpt");
  std::cout << "pretrain: step " << last.step << " total " << fixed(last.total) << " -> " << (out / "model.ckpt").string()
            << '\n';
  return 0;
}

int cmd_finetune(const RunConfig& rc) {
  const FinetuneConfig fc = rc.finetune();
  const Limits lim = rc.limits();
  const fs::path out = prepare_out(rc, "finetune");
  const auto pairs = read_dialogues(rc.str("data.finetune"), true);
  const auto dev = read_dialogues(rc.str("data.dev"), true);

  Checkpoint ck;
  std::unique_ptr<DamsModel> model;
  Vocab vocab;
  if (!rc.str("from_checkpoint").empty()) {
    ck = read_checkpoint(rc.str("from_checkpoint"));
    model = model_from_checkpoint(ck);
    vocab = vocab_of(ck);
  } else {
    vocab = corpus_vocab(rc, load_corpora(rc));
    model = std::make_unique<DamsModel>(rc.block(), vocab.size(), rc.seed());
    ck = snapshot(*model);
    embed_vocab(ck, vocab);
    put_limits(ck, lim);
  }

  const auto used = subsample(pairs.size(), fc.train_fraction, fc.seed);
  std::vector<EncodedDialogue> train, dev_enc;
  for (auto i : used) train.push_back(encode_dialogue(vocab, pairs[i], lim));
  for (const auto& d : dev) dev_enc.push_back(encode_dialogue(vocab, d, lim));

  std::ofstream log = open_out(out / "finetune.log");
  log << "# pairs " << used.size() << " of " << pairs.size() << '\n';
  log << "# used_indices";
  for (std::size_t k = 0; k < used.size(); ++k) log << (k ? ',' : ' ') << used[k];
  log << '\n' << "# step\tloss\tdev_ppl\tdev_acc\n";

  Finetuner tuner(*model, train, fc);
  auto eval_line = [&](std::size_t step, std::optional<double> loss) {
    const DevMetrics m = evaluate_dev(*model, dev_enc);
    log << step << '\t' << (loss ? fixed(*loss) : std::string("-")) << '\t' << fixed(m.perplexity) << '\t'
        << fixed(m.word_accuracy) << '\n';
    log.flush();
    return m;
  };
  DevMetrics last = eval_line(0, std::nullopt);
  for (std::size_t s = 1; s <= fc.steps; ++s) {
    const double loss = tuner.step();
    if (s % fc.eval_interval == 0 || s == fc.steps) last = eval_line(s, loss);
  }

  // the input checkpoint is carried over; only what fine-tuning changed is replaced
  if (fc.steps > 0) {
    const Checkpoint now = snapshot(*model, &tuner.optimizer());
    ck.tensors = now.tensors;
    ck.moments = now.moments;
    ck.optimizer_step = now.optimizer_step;
    ck.rng_states.clear();
  }
  write_checkpoint((out / "model.ckpt").string(), ck);
  std::cout << "finetune: " << used.size() << " pairs, " << fc.steps << " steps, dev ppl " << fixed(last.perplexity)
            << " acc " << fixed(last.word_accuracy) << " -> " << (out / "model.ckpt").string() << '\n';
  return 0;
}

std::unique_ptr<DamsModel> require_model(const RunConfig& rc, Vocab& vocab, const char* command) {
  if (rc.str("from_checkpoint").empty()) fail(ErrorKind::usage, std::string(command) + " needs --from-checkpoint");
  const Checkpoint ck = read_checkpoint(rc.str("from_checkpoint"));
  vocab = vocab_of(ck);
  return model_from_checkpoint(ck);
}

int cmd_summarize(const RunConfig& rc, const Flags& f) {
  const DecodeConfig dc = rc.decode();
  const Limits lim = rc.limits();
  const fs::path out = prepare_out(rc, "summarize");
  if (f.input.empty()) fail(ErrorKind::usage, "summarize needs --input");
  Vocab vocab;
  const auto model = require_model(rc, vocab, "summarize");
  const auto dialogues = read_dialogues(f.input);
  const auto summaries = summarize_all(*model, vocab, dialogues, dc, lim, threads_of(rc));
  const std::string target = f.output.empty() ? (out / "summaries.jsonl").string() : f.output;
  write_summaries(target, summaries);
  std::cout << "summarize: " << summaries.size() << " summaries -> " << target << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& rc, const Flags& f) {
  const fs::path out = prepare_out(rc, "evaluate");
  if (f.candidates.empty() || f.references.empty()) fail(ErrorKind::usage, "evaluate needs --candidates and --references");
  const auto cands = read_summaries(f.candidates);
  const auto refs = read_summaries(f.references);
  if (cands.size() != refs.size())
    fail(ErrorKind::data, "evaluate: " + std::to_string(cands.size()) + " candidates vs " + std::to_string(refs.size()) +
                              " references");
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < cands.size(); ++i) pairs.push_back({cands[i], refs[i]});
  const std::string table = score_table(corpus_rouge(pairs));
  open_out(out / "scores.tsv") << table;
  std::cout << table;
  return 0;
}

int cmd_probe(const RunConfig& rc, const Flags& f) {
  const fs::path out = prepare_out(rc, "probe");
  std::string reps_path = f.reps;
  if (reps_path.empty()) {
    Vocab vocab;
    const auto model = require_model(rc, vocab, "probe without --reps");
    const ProbeUnits u = probe_units(vocab, read_dialogues(rc.str("data.dialogues")), read_articles(rc.str("data.articles")),
                                     rc.count("probe.units"), rc.limits());
    reps_path = (out / "reps.tsv").string();
    export_reps(encode_reps(*model, u.dialogue), f.tag_a, reps_path);
    export_reps(encode_reps(*model, u.article), f.tag_b, reps_path, true);
  }
  const auto reps = read_reps(reps_path);
  for (const auto& tag : {f.tag_a, f.tag_b})
    if (!reps.count(tag)) fail(ErrorKind::data, reps_path + ": no vectors tagged '" + tag + "'");
  const ProbeReport r = domain_probe(reps.at(f.tag_a), reps.at(f.tag_b), rc.seed(), rc.probe(), f.tag_a + "/" + f.tag_b);
  std::ostringstream os;
  os << "pair\taccuracy\ttrain_accuracy\tcount_a\tcount_b\ttest_size\n"
     << r.tag << '\t' << fixed(r.accuracy) << '\t' << fixed(r.train_accuracy) << '\t' << r.count_a << '\t' << r.count_b
     << '\t' << r.test_size << '\n';
  open_out(out / "probe.tsv") << os.str();
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dialogue summarization with multi-source pretraining"};
  app.require_subcommand(1);
  Flags f;
  auto* synth = app.add_subcommand("synth", "generate the synthetic corpora");
  auto* pretrain = app.add_subcommand("pretrain", "multi-source pretraining");
  auto* finetune = app.add_subcommand("finetune", "fine-tune on dialogue/summary pairs");
  auto* summarize = app.add_subcommand("summarize", "beam-search summaries for a dialogue file");
  auto* evaluate = app.add_subcommand("evaluate", "ROUGE of candidates against references");
  auto* probe = app.add_subcommand("probe", "domain probe on encoder representations");
  for (auto* cmd : {synth, pretrain, finetune, summarize, evaluate, probe}) add_common(cmd, f);
  summarize->add_option("--input", f.input, "dialogues (JSON lines)");
  summarize->add_option("--output", f.output, "summaries file (default OUT/summaries.jsonl)");
  evaluate->add_option("--candidates", f.candidates, "candidate summaries (JSON lines)");
  evaluate->add_option("--references", f.references, "reference summaries (JSON lines)");
  probe->add_option("--reps", f.reps, "representation file (tag then values, tab-separated)");
  probe->add_option("--tag-a", f.tag_a, "first domain tag");
  probe->add_option("--tag-b", f.tag_b, "second domain tag");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const RunConfig rc = resolve(f);
    if (*synth) return cmd_synth(rc);
    if (*pretrain) return cmd_pretrain(rc);
    if (*finetune) return cmd_finetune(rc);
    if (*summarize) return cmd_summarize(rc, f);
    if (*evaluate) return cmd_evaluate(rc, f);
    if (*probe) return cmd_probe(rc, f);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
