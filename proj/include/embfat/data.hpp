#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "embfat/tensor.hpp"

namespace embfat {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";

// Lowercase, whitespace-split, leading/trailing ASCII punctuation stripped.
std::vector<std::string> tokenize(const std::string& text);

class Vocab {
 public:
  Vocab();

  // Returns the id of an existing token, or UNK.
  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return id_to_token_.size(); }
  bool contains(const std::string& token) const;

  // Appends a non-reserved token; id = current size.
  TokenId add(const std::string& token);

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Frequency-sorted vocabulary: freq >= min_freq, ties lexicographic, at most
// max_size content tokens after PAD/UNK.
Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus,
                  std::size_t min_freq, std::size_t max_size);

// One token per line in id order, reserved tokens included.
void save_vocab(const std::string& path, const Vocab& vocab);
Vocab load_vocab(const std::string& path);

struct Example {
  std::int64_t sample_id;
  std::vector<TokenId> ids;
  std::size_t label;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t num_classes = 0;
};

// File format: UTF-8, one example per line, "<label int> TAB <raw text>".
// Lines starting with '#' are manifest comments and are skipped.
Dataset load_dataset(const std::string& path, const Vocab& vocab);
void save_dataset(const std::string& path, const Dataset& dataset, const Vocab& vocab);

// Raw token lists of a dataset file, for vocabulary construction.
std::vector<std::vector<std::string>> load_corpus(const std::string& path);

struct EmbeddingTable {
  Tensor matrix;  // V×d
  std::size_t dim = 0;
};

// GloVe-style text file: "token v1 ... vd". Tokens absent from the file
// (including PAD/UNK) are drawn uniform in [-init_bound, init_bound]; the PAD
// row is zeroed afterwards.
EmbeddingTable load_embeddings(const std::string& path, const Vocab& vocab,
                               std::size_t d, double init_bound,
                               std::uint64_t seed);

// Deterministic random table for training without a pretrained file.
EmbeddingTable random_embeddings(std::size_t vocab_size, std::size_t d,
                                 double init_bound, std::uint64_t seed);

struct Neighbor {
  TokenId id;
  double similarity;
};

struct NeighborTable {
  std::vector<std::vector<Neighbor>> lists;  // indexed by token id

  const std::vector<Neighbor>& of(TokenId id) const { return lists[static_cast<std::size_t>(id)]; }
};

// Top-k cosine neighbors per non-excluded token, similarity >= min_sim,
// descending, ties by smaller token id. Zero-norm rows get empty lists and
// never appear as neighbors.
NeighborTable build_neighbor_table(const EmbeddingTable& emb, std::size_t k,
                                   double min_sim,
                                   const std::vector<TokenId>& excluded_ids);

struct Batch {
  std::size_t size = 0;
  std::size_t max_len = 0;
  std::vector<TokenId> ids;         // size*max_len, row-major
  std::vector<std::uint8_t> mask;   // true exactly on real tokens
  std::vector<std::size_t> labels;
  std::vector<std::int64_t> sample_ids;
  std::vector<std::size_t> lengths;  // true length, capped at max_len

  TokenId id_at(std::size_t b, std::size_t t) const { return ids[b * max_len + t]; }
};

Batch encode_batch(const std::vector<const Example*>& examples, std::size_t max_len);
Batch encode_single(const std::vector<TokenId>& ids, std::size_t label,
                    std::size_t max_len, std::int64_t sample_id = 0);

struct SyntheticConfig {
  std::size_t vocab_size = 200;
  std::size_t classes = 2;
  std::size_t keywords_per_class = 8;
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  std::size_t min_len = 8;
  std::size_t max_len = 20;
  std::uint64_t seed = 1;
};

// Writes train and test files in the dataset format, preceded by '#' manifest
// lines echoing the config. Each example carries exactly one class keyword at
// a uniform position; the label is that keyword's class.
void gen_synthetic(const SyntheticConfig& cfg, const std::string& train_path,
                   const std::string& test_path);

// Keyword id range for a class under gen_synthetic's token naming, as token
// indices into the generated vocabulary ordering w000..w{V-1}.
std::vector<std::string> synthetic_keywords(const SyntheticConfig& cfg, std::size_t cls);

}  // namespace embfat
