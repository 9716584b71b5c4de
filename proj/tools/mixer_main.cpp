// Command-line surface: train / generate / score / gradcheck.
// Exit codes: 0 ok, 2 usage or config error, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixer/checkpoint.hpp"
#include "mixer/config.hpp"
#include "mixer/corpus.hpp"
#include "mixer/decoding.hpp"
#include "mixer/gradcheck.hpp"
#include "mixer/metrics.hpp"
#include "mixer/model.hpp"
#include "mixer/training.hpp"
#include "mixer/vocab.hpp"

namespace {

using namespace mixer;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

const std::set<std::string> kTrainKeys = {
    "task",       "synthetic_kind", "synthetic_vocab", "len_min",     "len_max",
    "train_n",    "val_n",          "train_file",      "val_file",    "vocab_file",
    "min_count",  "t_max",          "unroll",          "regime",      "cell",
    "hidden",     "window",         "epochs",          "n_xent",      "n_xer",
    "delta",      "lr",             "lr_baseline",     "max_norm",    "batch",
    "dad_p_start", "dad_p_end",     "e2e_k",           "e2e_stride",  "reward",
    "seed",       "ckpt_out",       "vocab_out",       "log_out"};

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

// Corpus-format line: the text after the TAB when present, else the whole line.
std::string payload_field(const std::string& line) {
  const auto tab = line.find('\t');
  return tab == std::string::npos ? line : line.substr(tab + 1);
}

std::string source_field(const std::string& line) {
  const auto tab = line.find('\t');
  return tab == std::string::npos ? line : line.substr(0, tab);
}

int run_train(const std::string& config_path, long seed_flag) {
  const Config cfg = parse_config_file(config_path);
  require_known_keys(cfg, kTrainKeys);

  const std::uint64_t seed =
      seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag)
                     : static_cast<std::uint64_t>(get_int(cfg, "seed", 1));
  const int t_max = static_cast<int>(get_int(cfg, "t_max", 15));
  if (t_max < 1) throw ConfigError("t_max must be >= 1");

  TrainingSchedule sched;
  sched.unroll = static_cast<int>(get_int(cfg, "unroll", t_max + 1));
  sched.n_xent = static_cast<int>(get_int(cfg, "n_xent", 20));
  sched.n_xer = static_cast<int>(get_int(cfg, "n_xer", 5));
  sched.delta = static_cast<int>(get_int(cfg, "delta", 2));
  sched.epochs = static_cast<int>(get_int(cfg, "epochs", 10));
  sched.lr = get_double(cfg, "lr", 0.2);
  sched.lr_baseline = get_double(cfg, "lr_baseline", 0.05);
  sched.max_norm = get_double(cfg, "max_norm", 10.0);
  sched.batch = static_cast<int>(get_int(cfg, "batch", 32));
  sched.dad_p_start = get_double(cfg, "dad_p_start", 1.0);
  sched.dad_p_end = get_double(cfg, "dad_p_end", 0.5);
  sched.e2e_k = static_cast<int>(get_int(cfg, "e2e_k", 2));
  sched.e2e_stride = static_cast<int>(get_int(cfg, "e2e_stride", 5));
  sched.reward = reward_metric_from(get_str(cfg, "reward", "bleu"));
  sched.validate();

  const Regime regime = regime_from(get_str(cfg, "regime", "mixer"));
  const CellKind cell = cell_kind_from(get_str(cfg, "cell", "elman"));
  const int hidden = static_cast<int>(get_int(cfg, "hidden", 32));
  const int window = static_cast<int>(get_int(cfg, "window", 5));

  Vocabulary vocab;
  std::vector<ExamplePair> train_set, val_set;
  const std::string task = get_str(cfg, "task", "synthetic");
  if (task == "synthetic") {
    const SyntheticKind kind = synthetic_kind_from(get_str(cfg, "synthetic_kind", "reverse"));
    const int n_symbols = static_cast<int>(get_int(cfg, "synthetic_vocab", 20));
    const int len_lo = static_cast<int>(get_int(cfg, "len_min", 5));
    const int len_hi = static_cast<int>(get_int(cfg, "len_max", 10));
    if (len_hi > t_max) throw ConfigError("len_max exceeds t_max");
    const int train_n = static_cast<int>(get_int(cfg, "train_n", 2000));
    const int val_n = static_cast<int>(get_int(cfg, "val_n", 200));
    vocab = make_synthetic_vocab(n_symbols);
    train_set = gen_synthetic(kind, n_symbols, len_lo, len_hi, train_n, Rng::mix(seed, 0xDA7A, 0));
    if (val_n > 0)
      val_set = gen_synthetic(kind, n_symbols, len_lo, len_hi, val_n, Rng::mix(seed, 0xDA7A, 1));
  } else if (task == "files") {
    if (!has_key(cfg, "train_file")) throw ConfigError("task=files needs train_file");
    const std::string train_file = get_str(cfg, "train_file", "");
    if (has_key(cfg, "vocab_file")) {
      vocab = Vocabulary::load(get_str(cfg, "vocab_file", ""));
    } else {
      std::vector<std::vector<std::string>> streams;
      for (const auto& line : read_lines(train_file)) {
        if (line.empty()) continue;
        streams.push_back(split_ws(source_field(line)));
        streams.push_back(split_ws(payload_field(line)));
      }
      vocab = Vocabulary::build(streams, static_cast<int>(get_int(cfg, "min_count", 1)));
    }
    train_set = read_corpus(train_file, vocab, t_max);
    if (has_key(cfg, "val_file")) val_set = read_corpus(get_str(cfg, "val_file", ""), vocab, t_max);
  } else {
    throw ConfigError("task must be 'synthetic' or 'files'");
  }
  if (train_set.empty()) throw ConfigError("empty training corpus");

  int max_src = 1;
  for (const auto& ex : train_set) max_src = std::max(max_src, static_cast<int>(ex.source.size()));
  for (const auto& ex : val_set) max_src = std::max(max_src, static_cast<int>(ex.source.size()));

  ModelParams params = make_params(cell, vocab.size(), hidden, max_src, window);
  Rng init_rng(Rng::mix(seed, 0x171717, 0));
  init_params(params, init_rng);

  const auto rows = train_regime(regime, train_set, val_set, params, sched, seed);

  const std::string ckpt_out = get_str(cfg, "ckpt_out", "model.ckpt");
  const std::string vocab_out = get_str(cfg, "vocab_out", ckpt_out + ".vocab");
  const std::string log_out = get_str(cfg, "log_out", "train_log.csv");
  save_checkpoint(params, ckpt_out);
  vocab.save(vocab_out);
  {
    std::ofstream log(log_out);
    if (!log) throw ConfigError("cannot write " + log_out);
    write_log_header(log);
    for (const auto& row : rows) write_log_row(log, row);
  }
  if (!rows.empty()) {
    long total_batches = 0;
    for (const auto& row : rows) total_batches += row.stats.batches;
    const auto& last = rows.back();
    std::printf("trained %zu epochs (%ld batch updates); final train_loss %.6f val_metric %.4f\n",
                rows.size(), total_batches, last.stats.train_loss, last.val_metric);
  }
  std::printf("checkpoint: %s\nvocab: %s\nlog: %s\n", ckpt_out.c_str(), vocab_out.c_str(),
              log_out.c_str());
  return kExitOk;
}

int run_generate(const std::string& ckpt_path, const std::string& vocab_path,
                 const std::string& source_path, const std::string& output_path, int beam,
                 int max_len) {
  const ModelParams params = load_checkpoint(ckpt_path);
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  if (vocab.size() != params.vocab)
    throw ConfigError("vocab mismatch: checkpoint expects " + std::to_string(params.vocab) +
                      " entries, vocabulary has " + std::to_string(vocab.size()));
  if (beam < 1) throw ConfigError("--beam must be >= 1");
  if (max_len < 1) throw ConfigError("--max-len must be >= 1");

  std::ofstream file_out;
  const bool to_stdout = output_path == "-";
  if (!to_stdout) {
    file_out.open(output_path);
    if (!file_out) throw ConfigError("cannot write " + output_path);
  }
  std::ostream& out = to_stdout ? std::cout : file_out;

  for (const auto& line : read_lines(source_path)) {
    const auto tokens = split_ws(source_field(line));
    if (tokens.empty()) throw ConfigError("empty source line in " + source_path);
    const std::vector<int> source = vocab.encode(tokens);
    const GenResult gen = beam == 1 ? greedy_generate(source, params, max_len)
                                    : beam_generate(source, params, beam, max_len);
    std::vector<int> words;
    for (int w : gen.words) {
      if (w == Vocabulary::kEos) break;
      words.push_back(w);
    }
    out << vocab.decode(words) << '\n';
  }
  return kExitOk;
}

int run_score(const std::string& cand_path, const std::string& ref_path, const std::string& metric,
              const std::string& level) {
  const auto cand_lines = read_lines(cand_path);
  const auto ref_lines = read_lines(ref_path);
  if (cand_lines.size() != ref_lines.size())
    throw ConfigError("line-count mismatch: " + std::to_string(cand_lines.size()) + " vs " +
                      std::to_string(ref_lines.size()));
  if (cand_lines.empty()) throw ConfigError("empty input files");
  if (level != "corpus" && level != "sentence") throw ConfigError("--level must be corpus or sentence");
  const RewardMetric m = reward_metric_from(metric);

  // metrics only compare token identity; intern surfaces on the fly
  std::map<std::string, int> intern;
  auto encode = [&intern](const std::string& text) {
    std::vector<int> ids;
    for (const auto& tok : split_ws(text)) {
      auto [it, fresh] = intern.emplace(tok, static_cast<int>(intern.size()));
      ids.push_back(it->second);
    }
    return ids;
  };

  double score = 0.0;
  if (m == RewardMetric::bleu && level == "corpus") {
    std::vector<std::pair<std::vector<int>, std::vector<std::vector<int>>>> pairs;
    for (std::size_t i = 0; i < cand_lines.size(); ++i)
      pairs.emplace_back(encode(payload_field(cand_lines[i])),
                         std::vector<std::vector<int>>{encode(payload_field(ref_lines[i]))});
    score = corpus_bleu(pairs);
  } else {
    // sentence-level mean; ROUGE-2 has no corpus pooling convention here
    double total = 0.0;
    for (std::size_t i = 0; i < cand_lines.size(); ++i) {
      const auto cand = encode(payload_field(cand_lines[i]));
      const auto ref = encode(payload_field(ref_lines[i]));
      total += m == RewardMetric::bleu ? sentence_bleu(cand, {ref}) : rouge2(cand, ref);
    }
    score = total / static_cast<double>(cand_lines.size());
  }
  std::printf("%.4f\n", score);
  return kExitOk;
}

int run_gradcheck(long seed, const std::string& cell_arg, int instances) {
  std::vector<CellKind> cells;
  if (cell_arg == "both" || cell_arg == "elman") cells.push_back(CellKind::elman);
  if (cell_arg == "both" || cell_arg == "lstm") cells.push_back(CellKind::lstm);
  if (cells.empty()) throw ConfigError("--cell must be elman, lstm or both");

  Rng rng(static_cast<std::uint64_t>(seed));
  std::map<std::string, double> worst_by_tensor;
  double worst = 0.0;
  for (CellKind cell : cells) {
    for (int i = 0; i < instances; ++i) {
      CheckInstance inst = random_check_instance(cell, rng);
      const ExamplePair ex{inst.source, inst.target};
      Rng fwd(0);
      const ExampleGrads eg = xent_grads(ex, inst.params, fwd);
      const GradAccumulator analytic = backward(eg.trace, eg.dlogits, inst.params);
      const GradAccumulator numeric = finite_diff(
          [&ex](const ModelParams& p) {
            Rng r0(0);
            return xent_grads(ex, p, r0).xent_loss;
          },
          inst.params);
      const GradCheckReport report = compare_grads(inst.params, analytic, numeric);
      for (const auto& t : report.tensors) {
        auto& slot = worst_by_tensor[t.name];
        slot = std::max(slot, t.max_rel_error);
      }
      worst = std::max(worst, report.worst);
    }
  }
  for (const auto& [name, err] : worst_by_tensor)
    std::printf("%-14s max rel error %.3e\n", name.c_str(), err);
  const bool pass = worst < 1e-4;
  std::printf("%s (worst %.3e, tolerance 1e-04)\n", pass ? "PASS" : "FAIL", worst);
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequence-level training and decoding toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  long seed_flag = -1;
  CLI::App* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "flat key = value config file")->required();
  train->add_option("--seed", seed_flag, "override the config seed");

  std::string ckpt_path, vocab_path, source_path, output_path = "-";
  int beam = 1, max_len = 25;
  CLI::App* generate = app.add_subcommand("generate", "decode a source file with a checkpoint");
  generate->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  generate->add_option("--vocab", vocab_path, "vocabulary file")->required();
  generate->add_option("--source", source_path, "source sentences, corpus format")->required();
  generate->add_option("--output", output_path, "output file ('-' for stdout)");
  generate->add_option("--beam", beam, "beam size (1 = greedy)");
  generate->add_option("--max-len", max_len, "maximum generated length");

  std::string cand_path, ref_path, metric = "bleu", level = "corpus";
  CLI::App* score = app.add_subcommand("score", "score candidates against references");
  score->add_option("--candidates", cand_path, "candidate file")->required();
  score->add_option("--references", ref_path, "reference file")->required();
  score->add_option("--metric", metric, "bleu | rouge2");
  score->add_option("--level", level, "corpus | sentence");

  long gc_seed = 1;
  std::string gc_cell = "both";
  int gc_instances = 4;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--seed", gc_seed, "instance seed");
  gradcheck->add_option("--cell", gc_cell, "elman | lstm | both");
  gradcheck->add_option("--instances", gc_instances, "random instances per cell");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return run_train(config_path, seed_flag);
    if (generate->parsed()) return run_generate(ckpt_path, vocab_path, source_path, output_path, beam, max_len);
    if (score->parsed()) return run_score(cand_path, ref_path, metric, level);
    if (gradcheck->parsed()) return run_gradcheck(gc_seed, gc_cell, gc_instances);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
