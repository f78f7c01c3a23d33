#include "embfat/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "embfat/rng.hpp"

namespace embfat {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string raw;
  while (is >> raw) {
    std::size_t b = 0, e = raw.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(raw[e - 1]))) --e;
    if (b == e) continue;
    std::string tok = raw.substr(b, e - b);
    for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(std::move(tok));
  }
  return out;
}

Vocab::Vocab() {
  id_to_token_ = {kPadToken, kUnkToken};
  token_to_id_ = {{kPadToken, kPadId}, {kUnkToken, kUnkId}};
}

TokenId Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  return id_to_token_.at(static_cast<std::size_t>(id));
}

bool Vocab::contains(const std::string& token) const {
  return token_to_id_.count(token) != 0;
}

TokenId Vocab::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  TokenId id = static_cast<TokenId>(id_to_token_.size());
  id_to_token_.push_back(token);
  token_to_id_.emplace(token, id);
  return id;
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus,
                  std::size_t min_freq, std::size_t max_size) {
  if (max_size < 2) throw ConfigError("build_vocab: max_size must be >= 2");
  std::map<std::string, std::size_t> freq;
  for (const auto& tokens : corpus) {
    for (const auto& t : tokens) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (const auto& [tok, f] : freq) {
    if (f >= min_freq) entries.emplace_back(tok, f);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (entries.size() > max_size) entries.resize(max_size);

  Vocab vocab;
  for (const auto& [tok, f] : entries) vocab.add(tok);
  return vocab;
}

void save_vocab(const std::string& path, const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    out << vocab.token(static_cast<TokenId>(i)) << '\n';
  }
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocab file: " + path);
  Vocab vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 || line_no == 2) {
      const char* want = line_no == 1 ? kPadToken : kUnkToken;
      if (line != want) {
        throw ParseError(path + ": reserved token '" + std::string(want) +
                         "' missing at line " + std::to_string(line_no));
      }
      continue;
    }
    vocab.add(line);
  }
  return vocab;
}

std::vector<std::vector<std::string>> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file: " + path);
  std::vector<std::vector<std::string>> corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    corpus.push_back(tokenize(line.substr(tab + 1)));
  }
  return corpus;
}

Dataset load_dataset(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file: " + path);

  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::int64_t sample_id = 0;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": missing TAB separator");
    }
    const std::string label_str = line.substr(0, tab);
    std::size_t pos = 0;
    long label_val = -1;
    try {
      label_val = std::stol(label_str, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != label_str.size() || label_val < 0) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": bad label '" +
                       label_str + "'");
    }
    std::vector<std::string> tokens = tokenize(line.substr(tab + 1));
    if (tokens.empty()) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": empty token sequence");
    }
    Example ex;
    ex.sample_id = sample_id++;
    ex.label = static_cast<std::size_t>(label_val);
    for (const auto& t : tokens) ex.ids.push_back(vocab.id(t));
    max_label = std::max(max_label, ex.label);
    ds.examples.push_back(std::move(ex));
  }
  ds.num_classes = ds.examples.empty() ? 0 : max_label + 1;
  return ds;
}

void save_dataset(const std::string& path, const Dataset& dataset, const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  for (const Example& ex : dataset.examples) {
    out << ex.label << '\t';
    for (std::size_t i = 0; i < ex.ids.size(); ++i) {
      if (i) out << ' ';
      out << vocab.token(ex.ids[i]);
    }
    out << '\n';
  }
}

EmbeddingTable load_embeddings(const std::string& path, const Vocab& vocab,
                               std::size_t d, double init_bound,
                               std::uint64_t seed) {
  if (d == 0) throw ConfigError("load_embeddings: d must be positive");
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open embedding file: " + path);

  std::unordered_map<std::string, std::vector<double>> found;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string token, field;
    is >> token;
    std::vector<double> vals;
    while (is >> field) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(field, &pos);
        if (pos != field.size()) throw std::invalid_argument(field);
        vals.push_back(v);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad value '" +
                         field + "'");
      }
    }
    if (vals.size() != d) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(d) + " values, got " + std::to_string(vals.size()));
    }
    for (double x : vals) {
      if (!std::isfinite(x)) {
        throw NumericError(path + ":" + std::to_string(line_no) + ": non-finite value");
      }
    }
    if (vocab.contains(token)) found[token] = std::move(vals);
  }

  EmbeddingTable table;
  table.dim = d;
  table.matrix = Tensor::zeros({vocab.size(), d});
  Rng rng(derive_seed(seed, "embedding-init"));
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    auto it = found.find(vocab.token(static_cast<TokenId>(i)));
    if (it != found.end()) {
      for (std::size_t j = 0; j < d; ++j) table.matrix.at(i, j) = it->second[j];
    } else {
      for (std::size_t j = 0; j < d; ++j) {
        table.matrix.at(i, j) = rng.uniform(-init_bound, init_bound);
      }
    }
  }
  for (std::size_t j = 0; j < d; ++j) table.matrix.at(kPadId, j) = 0.0;
  return table;
}

EmbeddingTable random_embeddings(std::size_t vocab_size, std::size_t d,
                                 double init_bound, std::uint64_t seed) {
  EmbeddingTable table;
  table.dim = d;
  table.matrix = Tensor::zeros({vocab_size, d});
  Rng rng(derive_seed(seed, "embedding-init"));
  for (std::size_t i = 0; i < vocab_size; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      table.matrix.at(i, j) = rng.uniform(-init_bound, init_bound);
    }
  }
  for (std::size_t j = 0; j < d; ++j) table.matrix.at(kPadId, j) = 0.0;
  return table;
}

NeighborTable build_neighbor_table(const EmbeddingTable& emb, std::size_t k,
                                   double min_sim,
                                   const std::vector<TokenId>& excluded_ids) {
  if (k < 1) throw ConfigError("build_neighbor_table: k must be >= 1");
  const std::size_t v = emb.matrix.shape[0];
  const std::size_t d = emb.dim;

  std::vector<bool> excluded(v, false);
  for (TokenId id : excluded_ids) excluded[static_cast<std::size_t>(id)] = true;

  std::vector<double> norms(v, 0.0);
  for (std::size_t i = 0; i < v; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += emb.matrix.at(i, j) * emb.matrix.at(i, j);
    norms[i] = std::sqrt(s);
  }

  NeighborTable table;
  table.lists.resize(v);
  for (std::size_t i = 0; i < v; ++i) {
    if (excluded[i] || norms[i] == 0.0) continue;
    std::vector<Neighbor> cands;
    for (std::size_t j = 0; j < v; ++j) {
      if (j == i || excluded[j] || norms[j] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += emb.matrix.at(i, c) * emb.matrix.at(j, c);
      const double sim = dot / (norms[i] * norms[j]);
      if (sim >= min_sim) cands.push_back({static_cast<TokenId>(j), sim});
    }
    std::sort(cands.begin(), cands.end(), [](const Neighbor& a, const Neighbor& b) {
      if (a.similarity != b.similarity) return a.similarity > b.similarity;
      return a.id < b.id;
    });
    if (cands.size() > k) cands.resize(k);
    table.lists[i] = std::move(cands);
  }
  return table;
}

Batch encode_batch(const std::vector<const Example*>& examples, std::size_t max_len) {
  if (examples.empty()) throw ConfigError("encode_batch: empty batch");
  Batch b;
  b.size = examples.size();
  b.max_len = max_len;
  b.ids.assign(b.size * max_len, kPadId);
  b.mask.assign(b.size * max_len, 0);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example& ex = *examples[i];
    const std::size_t n = std::min(ex.ids.size(), max_len);
    for (std::size_t t = 0; t < n; ++t) {
      b.ids[i * max_len + t] = ex.ids[t];
      b.mask[i * max_len + t] = 1;
    }
    b.labels.push_back(ex.label);
    b.sample_ids.push_back(ex.sample_id);
    b.lengths.push_back(n);
  }
  return b;
}

Batch encode_single(const std::vector<TokenId>& ids, std::size_t label,
                    std::size_t max_len, std::int64_t sample_id) {
  Example ex{sample_id, ids, label};
  return encode_batch({&ex}, max_len);
}

std::vector<std::string> synthetic_keywords(const SyntheticConfig& cfg, std::size_t cls) {
  std::vector<std::string> out;
  char buf[16];
  for (std::size_t i = 0; i < cfg.keywords_per_class; ++i) {
    std::snprintf(buf, sizeof(buf), "w%03zu", cls * cfg.keywords_per_class + i);
    out.emplace_back(buf);
  }
  return out;
}

static std::string synthetic_token(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "w%03zu", i);
  return buf;
}

static void write_synthetic_split(std::ofstream& out, const SyntheticConfig& cfg,
                                  std::size_t count, Rng& rng) {
  const std::size_t keyword_count = cfg.classes * cfg.keywords_per_class;
  const std::size_t filler_count = cfg.vocab_size - keyword_count;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t cls = i % cfg.classes;
    const std::size_t len =
        cfg.min_len + static_cast<std::size_t>(rng.below(cfg.max_len - cfg.min_len + 1));
    std::vector<std::size_t> tokens(len);
    for (std::size_t t = 0; t < len; ++t) {
      tokens[t] = keyword_count + static_cast<std::size_t>(rng.below(filler_count));
    }
    const std::size_t pos = static_cast<std::size_t>(rng.below(len));
    tokens[pos] = cls * cfg.keywords_per_class +
                  static_cast<std::size_t>(rng.below(cfg.keywords_per_class));
    out << cls << '\t';
    for (std::size_t t = 0; t < len; ++t) {
      if (t) out << ' ';
      out << synthetic_token(tokens[t]);
    }
    out << '\n';
  }
}

void gen_synthetic(const SyntheticConfig& cfg, const std::string& train_path,
                   const std::string& test_path) {
  if (cfg.classes < 2) throw ConfigError("gen_synthetic: need at least 2 classes");
  if (cfg.keywords_per_class < 1) throw ConfigError("gen_synthetic: need keywords");
  if (cfg.vocab_size <= cfg.classes * cfg.keywords_per_class + 10) {
    throw ConfigError("gen_synthetic: vocab_size must exceed keyword count + 10");
  }
  if (cfg.min_len < 1 || cfg.min_len > cfg.max_len) {
    throw ConfigError("gen_synthetic: bad length range");
  }

  auto manifest = [&](std::ofstream& out, const char* split, std::size_t count) {
    out << "# embfat synthetic dataset\n";
    out << "# split = " << split << "\n";
    out << "# vocab_size = " << cfg.vocab_size << "\n";
    out << "# classes = " << cfg.classes << "\n";
    out << "# keywords_per_class = " << cfg.keywords_per_class << "\n";
    out << "# train_size = " << cfg.train_size << "\n";
    out << "# test_size = " << cfg.test_size << "\n";
    out << "# min_len = " << cfg.min_len << "\n";
    out << "# max_len = " << cfg.max_len << "\n";
    out << "# seed = " << cfg.seed << "\n";
    out << "# examples = " << count << "\n";
  };

  {
    std::ofstream out(train_path);
    if (!out) throw ParseError("cannot open for write: " + train_path);
    manifest(out, "train", cfg.train_size);
    Rng rng(derive_seed(cfg.seed, "synthetic-train"));
    write_synthetic_split(out, cfg, cfg.train_size, rng);
  }
  {
    std::ofstream out(test_path);
    if (!out) throw ParseError("cannot open for write: " + test_path);
    manifest(out, "test", cfg.test_size);
    Rng rng(derive_seed(cfg.seed, "synthetic-test"));
    write_synthetic_split(out, cfg, cfg.test_size, rng);
  }
}

}  // namespace embfat
