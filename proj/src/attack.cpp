#include "embfat/attack.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "embfat/rng.hpp"

namespace embfat {

ImportanceResult word_importance(const ModelParams& params,
                                 const std::vector<TokenId>& ids, std::size_t label) {
  if (ids.empty()) throw ConfigError("word_importance: empty sequence");
  const std::size_t n = std::min(ids.size(), params.dims.max_len);

  const Prediction orig = predict(params, ids);
  const double base = orig.probs.data[label];

  ImportanceResult r;
  r.scores.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] == kUnkId) continue;  // probe would be a no-op
    std::vector<TokenId> probe = ids;
    probe[i] = kUnkId;
    const Prediction p = predict(params, probe);
    ++r.queries;
    r.scores[i] = base - p.probs.data[label];
  }

  r.order.resize(n);
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    return r.scores[a] > r.scores[b];
  });
  return r;
}

AttackResult greedy_attack(const ModelParams& params, const Example& example,
                           const NeighborTable& neighbors, const AttackConfig& cfg) {
  if (cfg.query_budget < 1) throw ConfigError("greedy_attack: budget must be >= 1");
  if (!(cfg.max_sub_ratio > 0.0) || cfg.max_sub_ratio > 1.0) {
    throw ConfigError("greedy_attack: substitution ratio must be in (0,1]");
  }

  AttackResult result;
  result.sample_id = example.sample_id;
  result.final_ids = example.ids;

  const Prediction orig = predict(params, example.ids);
  if (orig.label != example.label) return result;  // queries stay 0
  result.originally_correct = true;

  const std::size_t n = std::min(example.ids.size(), params.dims.max_len);
  const std::size_t max_subs =
      static_cast<std::size_t>(cfg.max_sub_ratio * static_cast<double>(n));

  ImportanceResult imp = word_importance(params, example.ids, example.label);
  result.queries = imp.queries;
  if (result.queries > cfg.query_budget) {
    // importance probing alone exceeded the budget; report truncated
    result.queries = cfg.query_budget;
    return result;
  }

  std::vector<TokenId> cur = example.ids;
  double cur_true = orig.probs.data[example.label];

  for (std::size_t pos : imp.order) {
    if (result.substitutions.size() >= max_subs) break;
    const TokenId tok = cur[pos];
    if (tok == kPadId || tok == kUnkId) continue;
    if (static_cast<std::size_t>(tok) >= neighbors.lists.size()) continue;

    double best_prob = cur_true;
    TokenId best_tok = -1;
    for (const Neighbor& nb : neighbors.of(tok)) {
      if (result.queries >= cfg.query_budget) break;
      std::vector<TokenId> trial = cur;
      trial[pos] = nb.id;
      const Prediction p = predict(params, trial);
      ++result.queries;
      if (p.label != example.label) {
        result.success = true;
        result.substitutions.push_back({pos, tok, nb.id});
        result.final_ids = std::move(trial);
        return result;
      }
      if (p.probs.data[example.label] < best_prob) {
        best_prob = p.probs.data[example.label];
        best_tok = nb.id;
      }
    }
    if (best_tok >= 0) {
      cur[pos] = best_tok;
      cur_true = best_prob;
      result.substitutions.push_back({pos, tok, best_tok});
    }
    if (result.queries >= cfg.query_budget) break;
  }

  result.final_ids = std::move(cur);
  return result;
}

EvalOutput evaluate(const ModelParams& params, const Dataset& test,
                    const NeighborTable& neighbors, const AttackConfig& cfg,
                    std::size_t sample_count, std::uint64_t seed) {
  if (test.examples.empty()) throw ConfigError("evaluate: empty test set");
  if (sample_count < 1 || sample_count > test.examples.size()) {
    throw ConfigError("evaluate: sample count must be in [1, test size]");
  }
  if (cfg.query_budget < 1) throw ConfigError("evaluate: budget must be >= 1");

  EvalOutput out;

  std::size_t clean_correct = 0;
  for (const Example& ex : test.examples) {
    if (predict(params, ex.ids).label == ex.label) ++clean_correct;
  }
  out.metrics.clean_pct =
      100.0 * static_cast<double>(clean_correct) / static_cast<double>(test.examples.size());

  // Seeded sample without replacement.
  std::vector<std::size_t> indices(test.examples.size());
  std::iota(indices.begin(), indices.end(), 0);
  Rng rng(derive_seed(seed, "eval-sample"));
  for (std::size_t i = 0; i < sample_count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(indices.size() - i));
    std::swap(indices[i], indices[j]);
  }
  indices.resize(sample_count);

  out.results.resize(sample_count);
  const std::size_t threads = std::max<std::size_t>(1, cfg.threads);
  auto worker = [&](std::size_t tid) {
    for (std::size_t i = tid; i < sample_count; i += threads) {
      out.results[i] = greedy_attack(params, test.examples[indices[i]], neighbors, cfg);
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
  }

  std::size_t robust = 0;
  std::uint64_t queries = 0;
  for (const AttackResult& r : out.results) {
    if (r.originally_correct && !r.success) ++robust;
    queries += r.queries;
  }
  out.metrics.aua_pct = 100.0 * static_cast<double>(robust) / static_cast<double>(sample_count);
  out.metrics.mean_queries = static_cast<double>(queries) / static_cast<double>(sample_count);
  out.metrics.evaluated = sample_count;
  return out;
}

void save_attack_results(const std::string& path, const std::vector<AttackResult>& results) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  for (const AttackResult& r : results) {
    out << r.sample_id << ' ' << (r.originally_correct ? 1 : 0) << ' '
        << (r.success ? 1 : 0) << ' ' << r.queries << " subs=";
    for (std::size_t i = 0; i < r.substitutions.size(); ++i) {
      if (i) out << ',';
      const Substitution& s = r.substitutions[i];
      out << s.position << ':' << s.old_id << "->" << s.new_id;
    }
    out << '\n';
  }
}

void save_metrics(const std::string& path, const EvalMetrics& m) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", m.clean_pct);
  out << "clean_pct = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.4f", m.aua_pct);
  out << "aua_pct = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.4f", m.mean_queries);
  out << "mean_queries = " << buf << "\n";
  out << "evaluated = " << m.evaluated << "\n";
}

}  // namespace embfat
