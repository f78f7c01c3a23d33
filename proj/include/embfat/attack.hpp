#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "embfat/data.hpp"
#include "embfat/model.hpp"

namespace embfat {

struct AttackConfig {
  std::size_t neighbors = 8;       // k candidates per position
  double min_sim = 0.5;            // neighbor table similarity floor
  double max_sub_ratio = 0.3;      // rho: substituted positions <= rho*n
  std::size_t query_budget = 500;  // model queries per example
  std::size_t threads = 1;
};

struct Substitution {
  std::size_t position;
  TokenId old_id;
  TokenId new_id;
};

struct AttackResult {
  std::int64_t sample_id = 0;
  bool originally_correct = false;
  bool success = false;
  std::size_t queries = 0;
  std::vector<TokenId> final_ids;
  std::vector<Substitution> substitutions;
};

struct EvalMetrics {
  double clean_pct = 0.0;   // over the full test set
  double aua_pct = 0.0;     // over the attacked sample
  double mean_queries = 0.0;
  std::size_t evaluated = 0;
};

struct ImportanceResult {
  std::vector<double> scores;        // per position
  std::vector<std::size_t> order;    // positions by descending score, ties by index
  std::size_t queries = 0;
};

// UNK-replacement probability drop per position. Positions already UNK score 0
// without spending a query; PAD never occurs inside the true length.
ImportanceResult word_importance(const ModelParams& params,
                                 const std::vector<TokenId>& ids, std::size_t label);

// Greedy black-box synonym-substitution attack over the neighbor table.
AttackResult greedy_attack(const ModelParams& params, const Example& example,
                           const NeighborTable& neighbors, const AttackConfig& cfg);

struct EvalOutput {
  EvalMetrics metrics;
  std::vector<AttackResult> results;  // sampled examples, sample-id order of draw
};

// Clean% over the full test set; Aua%/#Query over a seeded sample without
// replacement of sample_count examples.
EvalOutput evaluate(const ModelParams& params, const Dataset& test,
                    const NeighborTable& neighbors, const AttackConfig& cfg,
                    std::size_t sample_count, std::uint64_t seed);

void save_attack_results(const std::string& path, const std::vector<AttackResult>& results);
void save_metrics(const std::string& path, const EvalMetrics& m);

}  // namespace embfat
