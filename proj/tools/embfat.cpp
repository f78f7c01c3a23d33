#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "embfat/attack.hpp"
#include "embfat/data.hpp"
#include "embfat/model.hpp"
#include "embfat/perturb.hpp"
#include "embfat/train.hpp"

namespace fs = std::filesystem;
using namespace embfat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

void write_resolved_config(CLI::App* sub, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "config.resolved");
  out << "# resolved configuration for subcommand '" << sub->get_name() << "'\n";
  out << sub->config_to_str(true, false);
}

struct GenArgs {
  SyntheticConfig cfg;
  std::string train_path = "train.tsv";
  std::string test_path = "test.tsv";
};

struct TrainArgs {
  std::string data_path;
  std::string out_dir = "run";
  std::string trainer = "fat";
  std::string embeddings_path;
  TrainConfig cfg;
  ModelDims dims;
  std::size_t min_freq = 1;
  std::size_t vocab_max = 50000;
  double init_bound = 2.0;
  bool no_history = false;
};

int run_train(const TrainArgs& a, CLI::App* sub) {
  TrainConfig cfg = a.cfg;
  cfg.kind = trainer_from_name(a.trainer);
  cfg.history_init = !a.no_history;

  auto corpus = load_corpus(a.data_path);
  Vocab vocab = build_vocab(corpus, a.min_freq, a.vocab_max);
  Dataset ds = load_dataset(a.data_path, vocab);
  if (ds.examples.empty()) throw ConfigError("training dataset is empty");

  ModelDims dims = a.dims;
  dims.vocab = vocab.size();
  dims.classes = std::max<std::size_t>(2, ds.num_classes);

  EmbeddingTable table;
  if (!a.embeddings_path.empty()) {
    table = load_embeddings(a.embeddings_path, vocab, dims.embed_dim, a.init_bound,
                            cfg.seed);
  } else {
    table = random_embeddings(vocab.size(), dims.embed_dim, a.init_bound, cfg.seed);
  }
  ModelParams params = init_params(dims, cfg.seed, &table);

  TrainReport report = train(params, ds, cfg);

  const fs::path out_dir(a.out_dir);
  fs::create_directories(out_dir);
  CheckpointMeta meta;
  meta.epochs_run = cfg.epochs;
  meta.trainer_kind = static_cast<std::uint32_t>(cfg.kind);
  meta.seed = cfg.seed;
  save_checkpoint(params, meta, (out_dir / "checkpoint.efat").string());
  save_report((out_dir / "train_report.txt").string(), report, cfg);
  save_vocab((out_dir / "vocab.txt").string(), vocab);
  write_resolved_config(sub, out_dir);

  std::printf("trained %s for %zu epochs, %llu back-props, final loss %.6f\n",
              trainer_name(cfg.kind), cfg.epochs,
              static_cast<unsigned long long>(report.total_backprops),
              report.epochs.back().mean_loss);
  return kExitOk;
}

struct AttackArgs {
  std::string checkpoint_path;
  std::string vocab_path;
  std::string data_path;
  std::string out_dir = "run";
  std::uint64_t seed = 1;
  std::size_t samples = 200;
  AttackConfig cfg;
};

int run_attack(const AttackArgs& a, CLI::App* sub) {
  Checkpoint ck = load_checkpoint(a.checkpoint_path);
  Vocab vocab = load_vocab(a.vocab_path);
  if (vocab.size() != ck.params.dims.vocab) {
    throw ConfigError("vocab size " + std::to_string(vocab.size()) +
                      " does not match checkpoint vocab " +
                      std::to_string(ck.params.dims.vocab));
  }
  Dataset test = load_dataset(a.data_path, vocab);

  EmbeddingTable emb;
  emb.matrix = ck.params.embedding;
  emb.dim = ck.params.dims.embed_dim;
  NeighborTable neighbors =
      build_neighbor_table(emb, a.cfg.neighbors, a.cfg.min_sim, {kPadId, kUnkId});

  EvalOutput out = evaluate(ck.params, test, neighbors, a.cfg, a.samples, a.seed);

  const fs::path out_dir(a.out_dir);
  fs::create_directories(out_dir);
  save_metrics((out_dir / "attack_metrics.txt").string(), out.metrics);
  save_attack_results((out_dir / "attack_results.txt").string(), out.results);
  write_resolved_config(sub, out_dir);

  std::printf("Clean%% = %.2f\nAua%% = %.2f\n#Query = %.2f\n", out.metrics.clean_pct,
              out.metrics.aua_pct, out.metrics.mean_queries);
  return kExitOk;
}

struct DiagArgs {
  std::string mode = "single-vs-multi";
  std::string checkpoint_path;
  std::string vocab_path;
  std::string data_path;
  std::string out_dir = "run";
  std::uint64_t seed = 1;
  std::size_t probe = 100;
  PerturbConfig perturb;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
};

int run_diag(const DiagArgs& a, CLI::App* sub) {
  const fs::path out_dir(a.out_dir);
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "similarity.txt");
  if (!out) throw ConfigError("cannot open output: " + (out_dir / "similarity.txt").string());

  if (a.mode == "single-vs-multi") {
    Checkpoint ck = load_checkpoint(a.checkpoint_path);
    Vocab vocab = load_vocab(a.vocab_path);
    Dataset ds = load_dataset(a.data_path, vocab);
    const std::size_t probe = std::min(a.probe, ds.examples.size());
    if (probe == 0) throw ConfigError("empty probe set");

    out << "# direction similarity: single-step vs " << a.perturb.steps
        << "-step perturbation\n";
    out << "# sample_id similarity\n";
    double sum = 0.0;
    for (std::size_t i = 0; i < probe; ++i) {
      const Example& ex = ds.examples[i];
      const std::size_t n = std::min(ex.ids.size(), ck.params.dims.max_len);
      Rng rng_single(derive_seed(a.seed, "diag-single", static_cast<std::uint64_t>(ex.sample_id)));
      Rng rng_multi(derive_seed(a.seed, "diag-multi", static_cast<std::uint64_t>(ex.sample_id)));
      Tensor d0 = init_random(n, ck.params.dims.embed_dim, a.perturb.eps0, rng_single);
      Tensor single = gen_fat(ck.params, ex, d0, a.perturb.eps);
      Tensor multi = gen_pgd(ck.params, ex, a.perturb, rng_multi);
      const double sim = direction_similarity(single, multi);
      sum += sim;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%lld %.6f",
                    static_cast<long long>(ex.sample_id), sim);
      out << buf << '\n';
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", sum / static_cast<double>(probe));
    out << "mean = " << buf << '\n';
    std::printf("mean similarity = %s over %zu samples\n", buf, probe);
  } else if (a.mode == "epochs") {
    Vocab vocab;
    {
      auto corpus = load_corpus(a.data_path);
      vocab = build_vocab(corpus, 1, 50000);
    }
    Dataset ds = load_dataset(a.data_path, vocab);
    ModelDims dims;
    dims.vocab = vocab.size();
    dims.classes = std::max<std::size_t>(2, ds.num_classes);
    ModelParams params = init_params(dims, a.seed);
    TrainConfig cfg;
    cfg.kind = TrainerKind::kFat;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.perturb = a.perturb;
    cfg.seed = a.seed;
    cfg.probe_count = a.probe;
    TrainReport report = train(params, ds, cfg);

    out << "# direction similarity of successive-epoch FAT perturbations\n";
    out << "# sample_id then one column per epoch (nan where undefined), then mean\n";
    for (std::size_t r = 0; r < report.probe_ids.size(); ++r) {
      out << report.probe_ids[r];
      double sum = 0.0;
      std::size_t cnt = 0;
      for (double v : report.probe_sims[r]) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " %.6f", v);
        out << buf;
        if (!std::isnan(v)) {
          sum += v;
          ++cnt;
        }
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), " %.6f", cnt ? sum / static_cast<double>(cnt) : 0.0);
      out << buf << '\n';
    }
    double mean_last = 0.0;
    std::size_t cnt = 0;
    for (const EpochStats& s : report.epochs) {
      if (s.has_similarity) {
        mean_last = s.dir_similarity;
        ++cnt;
      }
    }
    std::printf("recorded similarity for %zu epochs, last mean %.4f\n", cnt, mean_last);
  } else {
    throw ConfigError("unknown diag mode '" + a.mode + "'");
  }
  write_resolved_config(sub, out_dir);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"embfat: embedding-space fast adversarial training toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value config file; flags take precedence");

  GenArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-synthetic", "generate a synthetic dataset");
  gen_cmd->add_option("--out-train", gen.train_path, "training split output path");
  gen_cmd->add_option("--out-test", gen.test_path, "test split output path");
  gen_cmd->add_option("--vocab-size", gen.cfg.vocab_size, "token inventory size");
  gen_cmd->add_option("--keywords", gen.cfg.keywords_per_class, "keywords per class");
  gen_cmd->add_option("--train-size", gen.cfg.train_size, "training examples");
  gen_cmd->add_option("--test-size", gen.cfg.test_size, "test examples");
  gen_cmd->add_option("--min-len", gen.cfg.min_len, "minimum example length");
  gen_cmd->add_option("--max-len", gen.cfg.max_len, "maximum example length");
  gen_cmd->add_option("--seed", gen.cfg.seed, "generator seed")->required();

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train a classifier");
  train_cmd->add_option("--data", tr.data_path, "training dataset file")->required();
  train_cmd->add_option("--out", tr.out_dir, "output directory");
  train_cmd->add_option("--seed", tr.cfg.seed, "run seed")->required();
  train_cmd->add_option("--trainer", tr.trainer,
                        "standard | pgd-at | fat | fat-interval");
  train_cmd->add_option("--epochs", tr.cfg.epochs, "training epochs");
  train_cmd->add_option("--batch-size", tr.cfg.batch_size, "mini-batch size");
  train_cmd->add_option("--lr", tr.cfg.adam.lr, "learning rate");
  train_cmd->add_option("--beta1", tr.cfg.adam.beta1, "first moment decay");
  train_cmd->add_option("--beta2", tr.cfg.adam.beta2, "second moment decay");
  train_cmd->add_option("--adam-eps", tr.cfg.adam.eps_hat, "adam epsilon-hat");
  train_cmd->add_option("--epsilon", tr.cfg.perturb.eps, "single-step magnitude");
  train_cmd->add_option("--epsilon0", tr.cfg.perturb.eps0, "init magnitude");
  train_cmd->add_option("--alpha", tr.cfg.perturb.alpha, "pgd step size");
  train_cmd->add_option("--steps", tr.cfg.perturb.steps, "pgd steps");
  train_cmd->add_option("--interval", tr.cfg.interval, "fat-interval update interval");
  train_cmd->add_flag("--no-history-init", tr.no_history,
                      "random perturbation init every epoch");
  train_cmd->add_option("--embed-dim", tr.dims.embed_dim, "embedding dimension");
  train_cmd->add_option("--hidden", tr.dims.hidden, "hidden layer width");
  train_cmd->add_option("--max-len", tr.dims.max_len, "sequence length cap");
  train_cmd->add_option("--vocab-max", tr.vocab_max, "vocabulary size cap");
  train_cmd->add_option("--min-freq", tr.min_freq, "vocabulary frequency floor");
  train_cmd->add_option("--embeddings", tr.embeddings_path, "pretrained embedding file");
  train_cmd->add_option("--init-bound", tr.init_bound, "embedding init bound");
  train_cmd->add_option("--probe", tr.cfg.probe_count, "similarity probe subset size");

  AttackArgs at;
  CLI::App* attack_cmd = app.add_subcommand("attack", "evaluate robustness under attack");
  attack_cmd->add_option("--checkpoint", at.checkpoint_path, "model checkpoint")->required();
  attack_cmd->add_option("--vocab", at.vocab_path, "vocab file from training")->required();
  attack_cmd->add_option("--data", at.data_path, "test dataset file")->required();
  attack_cmd->add_option("--out", at.out_dir, "output directory");
  attack_cmd->add_option("--seed", at.seed, "sampling seed")->required();
  attack_cmd->add_option("--samples", at.samples, "attacked sample count");
  attack_cmd->add_option("--k", at.cfg.neighbors, "neighbor candidates per position");
  attack_cmd->add_option("--min-sim", at.cfg.min_sim, "neighbor similarity floor");
  attack_cmd->add_option("--ratio", at.cfg.max_sub_ratio, "max substituted fraction");
  attack_cmd->add_option("--budget", at.cfg.query_budget, "query budget per example");
  attack_cmd->add_option("--threads", at.cfg.threads, "evaluation threads");

  DiagArgs dg;
  CLI::App* diag_cmd = app.add_subcommand("diag-similarity", "perturbation direction diagnostics");
  diag_cmd->add_option("--mode", dg.mode, "single-vs-multi | epochs");
  diag_cmd->add_option("--checkpoint", dg.checkpoint_path, "checkpoint (single-vs-multi)");
  diag_cmd->add_option("--vocab", dg.vocab_path, "vocab file (single-vs-multi)");
  diag_cmd->add_option("--data", dg.data_path, "dataset file")->required();
  diag_cmd->add_option("--out", dg.out_dir, "output directory");
  diag_cmd->add_option("--seed", dg.seed, "run seed")->required();
  diag_cmd->add_option("--probe", dg.probe, "probe sample count");
  diag_cmd->add_option("--epsilon", dg.perturb.eps, "single-step magnitude");
  diag_cmd->add_option("--epsilon0", dg.perturb.eps0, "init magnitude");
  diag_cmd->add_option("--alpha", dg.perturb.alpha, "pgd step size");
  diag_cmd->add_option("--steps", dg.perturb.steps, "pgd steps");
  diag_cmd->add_option("--epochs", dg.epochs, "fat epochs (epochs mode)");
  diag_cmd->add_option("--batch-size", dg.batch_size, "batch size (epochs mode)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen_cmd->parsed()) {
      gen_synthetic(gen.cfg, gen.train_path, gen.test_path);
      std::printf("wrote %s and %s\n", gen.train_path.c_str(), gen.test_path.c_str());
      return kExitOk;
    }
    if (train_cmd->parsed()) return run_train(tr, train_cmd);
    if (attack_cmd->parsed()) return run_attack(at, attack_cmd);
    if (diag_cmd->parsed()) return run_diag(dg, diag_cmd);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
