#include "embfat/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <unordered_map>

namespace embfat {

const char* trainer_name(TrainerKind kind) {
  switch (kind) {
    case TrainerKind::kStandard: return "standard";
    case TrainerKind::kPgdAt: return "pgd-at";
    case TrainerKind::kFat: return "fat";
    case TrainerKind::kFatInterval: return "fat-interval";
  }
  throw ConfigError("unknown trainer kind");
}

TrainerKind trainer_from_name(const std::string& name) {
  if (name == "standard") return TrainerKind::kStandard;
  if (name == "pgd-at") return TrainerKind::kPgdAt;
  if (name == "fat") return TrainerKind::kFat;
  if (name == "fat-interval") return TrainerKind::kFatInterval;
  throw ConfigError("unknown trainer '" + name + "'");
}

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                 std::uint64_t t, const AdamHyper& hp) {
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    m.data[i] = hp.beta1 * m.data[i] + (1.0 - hp.beta1) * g;
    v.data[i] = hp.beta2 * v.data[i] + (1.0 - hp.beta2) * g * g;
    const double mhat = m.data[i] / bc1;
    const double vhat = v.data[i] / bc2;
    param.data[i] -= hp.lr * mhat / std::sqrt(vhat + hp.eps_hat);
  }
}

Adam::Adam(const ModelParams& params, AdamHyper hp) : hp_(hp) {
  const Tensor* ts[5] = {&params.embedding, &params.w1, &params.b1, &params.w2,
                         &params.b2};
  for (int i = 0; i < 5; ++i) {
    m_[i] = Tensor::zeros(ts[i]->shape);
    v_[i] = Tensor::zeros(ts[i]->shape);
  }
}

void Adam::step(ModelParams& params, const ParamGrads& grads) {
  ++t_;
  Tensor* ps[5] = {&params.embedding, &params.w1, &params.b1, &params.w2, &params.b2};
  const Tensor* gs[5] = {&grads.embedding, &grads.w1, &grads.b1, &grads.w2, &grads.b2};
  static const char* names[5] = {"embedding", "w1", "b1", "w2", "b2"};
  for (int i = 0; i < 5; ++i) {
    if (!all_finite(*gs[i])) {
      throw NumericError(std::string("non-finite gradient for parameter ") + names[i]);
    }
    adam_update(*ps[i], *gs[i], m_[i], v_[i], t_, hp_);
  }
}

std::uint64_t expected_backprops(TrainerKind kind, std::size_t n, std::size_t epochs,
                                 std::size_t pgd_steps, std::size_t interval,
                                 std::size_t batch_size) {
  if (n == 0 || epochs == 0 || batch_size == 0) {
    throw ConfigError("expected_backprops: invalid arguments");
  }
  const std::uint64_t batches = (n + batch_size - 1) / batch_size;
  switch (kind) {
    case TrainerKind::kStandard:
      return epochs * batches;
    case TrainerKind::kPgdAt:
      if (pgd_steps == 0) throw ConfigError("expected_backprops: pgd steps must be >= 1");
      return epochs * batches * (pgd_steps + 1);
    case TrainerKind::kFat:
      return 2 * epochs * batches;
    case TrainerKind::kFatInterval: {
      if (interval == 0) throw ConfigError("expected_backprops: interval must be >= 1");
      const std::uint64_t update_epochs = (epochs + interval - 1) / interval;
      return batches * (epochs + update_epochs);
    }
  }
  throw ConfigError("expected_backprops: unknown trainer kind");
}

namespace {

void validate_config(const TrainConfig& cfg, const Dataset& data,
                     const ModelParams& params) {
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (cfg.interval < 1) throw ConfigError("train: interval must be >= 1");
  if (cfg.kind == TrainerKind::kPgdAt && cfg.perturb.steps < 1) {
    throw ConfigError("train: pgd steps must be >= 1");
  }
  if (!(cfg.perturb.eps > 0.0) || cfg.perturb.eps0 < 0.0 || !(cfg.perturb.alpha > 0.0)) {
    throw ConfigError("train: invalid perturbation config");
  }
  if (data.examples.empty()) throw ConfigError("train: empty dataset");
  for (const Example& ex : data.examples) {
    if (ex.label >= params.dims.classes) {
      throw ConfigError("train: label " + std::to_string(ex.label) +
                        " out of range for " + std::to_string(params.dims.classes) +
                        " classes");
    }
  }
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed,
                                        std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "shuffle", epoch));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Rng sample_rng(std::uint64_t seed, std::int64_t sample_id, std::size_t epoch) {
  return Rng(derive_seed(seed, "perturb", static_cast<std::uint64_t>(sample_id), epoch));
}

void place_slice(Tensor& padded, std::size_t example, std::size_t max_len,
                 std::size_t d, const Tensor& delta) {
  const std::size_t base = example * max_len * d;
  for (std::size_t t = 0; t < delta.shape[0]; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      padded.data[base + t * d + j] = delta.at(t, j);
    }
  }
}

Tensor take_slice(const Tensor& padded, std::size_t example, std::size_t max_len,
                  std::size_t n, std::size_t d) {
  Tensor out = Tensor::zeros({n, d});
  const std::size_t base = example * max_len * d;
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < d; ++j) out.at(t, j) = padded.data[base + t * d + j];
  }
  return out;
}

}  // namespace

TrainReport train(ModelParams& params, const Dataset& data, const TrainConfig& cfg) {
  validate_config(cfg, data, params);
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t bp_start = backprop_count();

  const std::size_t n_examples = data.examples.size();
  const std::size_t d = params.dims.embed_dim;
  const std::size_t max_len = params.dims.max_len;
  const bool adversarial = cfg.kind != TrainerKind::kStandard;
  const bool fat_like =
      cfg.kind == TrainerKind::kFat || cfg.kind == TrainerKind::kFatInterval;
  const std::size_t interval = cfg.kind == TrainerKind::kFat ? 1 : cfg.interval;

  std::unordered_map<std::int64_t, std::size_t> probe;  // sample id -> row
  Adam adam(params, cfg.adam);
  PerturbCache cache;
  TrainReport report;
  for (std::size_t i = 0; i < std::min(cfg.probe_count, n_examples); ++i) {
    probe.emplace(data.examples[i].sample_id, i);
    report.probe_ids.push_back(data.examples[i].sample_id);
  }
  if (fat_like) {
    report.probe_sims.assign(
        probe.size(), std::vector<double>(cfg.epochs, std::nan("")));
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t bp_epoch_start = backprop_count();
    const bool update_epoch = !fat_like || (epoch % interval == 0);
    const std::vector<std::size_t> order = shuffled_order(n_examples, cfg.seed, epoch);

    double loss_weighted = 0.0;
    double sim_sum = 0.0;
    std::size_t sim_count = 0;

    for (std::size_t start = 0; start < n_examples; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n_examples);
      std::vector<const Example*> chunk;
      chunk.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) chunk.push_back(&data.examples[order[i]]);
      Batch batch = encode_batch(chunk, max_len);

      double batch_loss = 0.0;
      if (!adversarial) {
        LossGrads lg = loss_and_grads(params, batch, nullptr, GradTarget::kParams);
        adam.step(params, *lg.params);
        batch_loss = lg.loss;
      } else {
        Tensor delta = Tensor::zeros({batch.size, max_len, d});

        if (cfg.kind == TrainerKind::kPgdAt) {
          for (std::size_t i = 0; i < batch.size; ++i) {
            Rng rng = sample_rng(cfg.seed, batch.sample_ids[i], epoch);
            place_slice(delta, i, max_len, d,
                        init_random(batch.lengths[i], d, cfg.perturb.eps0, rng));
          }
          for (std::size_t step = 0; step < cfg.perturb.steps; ++step) {
            LossGrads lg = loss_and_grads(params, batch, &delta, GradTarget::kDelta);
            for (std::size_t i = 0; i < batch.size; ++i) {
              const std::size_t n = batch.lengths[i];
              Tensor cur = take_slice(delta, i, max_len, n, d);
              Tensor g = take_slice(*lg.delta, i, max_len, n, d);
              if (auto next = ascent_step(cur, g, cfg.perturb.alpha)) {
                place_slice(delta, i, max_len, d, *next);
              }
            }
          }
        } else if (update_epoch) {
          // FAT update epoch: history-aware init, one ascent step, refresh cache.
          // Previous deltas are copied out first; cache.put below may rehash.
          std::vector<std::optional<Tensor>> prev(batch.size);
          for (std::size_t i = 0; i < batch.size; ++i) {
            if (const PerturbRecord* rec = cache.get(batch.sample_ids[i])) {
              prev[i] = rec->delta;
            }
            Rng rng = sample_rng(cfg.seed, batch.sample_ids[i], epoch);
            Tensor d0 = (cfg.history_init && prev[i])
                            ? init_history(*prev[i], cfg.perturb.eps0, rng)
                            : init_random(batch.lengths[i], d, cfg.perturb.eps0, rng);
            place_slice(delta, i, max_len, d, d0);
          }
          LossGrads lg = loss_and_grads(params, batch, &delta, GradTarget::kDelta);
          for (std::size_t i = 0; i < batch.size; ++i) {
            const std::size_t n = batch.lengths[i];
            Tensor cur = take_slice(delta, i, max_len, n, d);
            Tensor g = take_slice(*lg.delta, i, max_len, n, d);
            Tensor fin = std::move(cur);
            if (auto next = ascent_step(fin, g, cfg.perturb.eps)) fin = std::move(*next);
            auto probe_it = probe.find(batch.sample_ids[i]);
            if (prev[i] && probe_it != probe.end() && prev[i]->same_shape(fin)) {
              const double sim = direction_similarity(fin, *prev[i]);
              sim_sum += sim;
              ++sim_count;
              report.probe_sims[probe_it->second][epoch] = sim;
            }
            place_slice(delta, i, max_len, d, fin);
            cache.put(batch.sample_ids[i], std::move(fin), epoch);
          }
        } else {
          // FAT-I reuse epoch: cached perturbations verbatim.
          for (std::size_t i = 0; i < batch.size; ++i) {
            const PerturbRecord* rec = cache.get(batch.sample_ids[i]);
            if (!rec) throw ConfigError("fat-interval: missing cached perturbation");
            place_slice(delta, i, max_len, d, rec->delta);
            auto probe_it = probe.find(batch.sample_ids[i]);
            if (probe_it != probe.end()) {
              sim_sum += 1.0;  // unchanged perturbation
              ++sim_count;
              report.probe_sims[probe_it->second][epoch] = 1.0;
            }
          }
        }

        LossGrads lg = loss_and_grads(params, batch, &delta, GradTarget::kParams);
        adam.step(params, *lg.params);
        batch_loss = lg.loss;
      }
      loss_weighted += batch_loss * static_cast<double>(batch.size);
    }

    EpochStats stats;
    stats.mean_loss = loss_weighted / static_cast<double>(n_examples);
    stats.backprops = backprop_count() - bp_epoch_start;
    if (fat_like && sim_count > 0) {
      stats.has_similarity = true;
      stats.dir_similarity = sim_sum / static_cast<double>(sim_count);
    }
    report.epochs.push_back(stats);
  }

  report.total_backprops = backprop_count() - bp_start;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

void save_report(const std::string& path, const TrainReport& report,
                 const TrainConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  out << "trainer = " << trainer_name(cfg.kind) << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "total_backprops = " << report.total_backprops << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", report.wall_seconds);
  out << "wall_seconds = " << buf << "\n";
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    const EpochStats& s = report.epochs[e];
    out << "\n";
    out << "epoch = " << e << "\n";
    std::snprintf(buf, sizeof(buf), "%.9f", s.mean_loss);
    out << "mean_loss = " << buf << "\n";
    out << "backprops = " << s.backprops << "\n";
    if (s.has_similarity) {
      std::snprintf(buf, sizeof(buf), "%.6f", s.dir_similarity);
      out << "dir_similarity = " << buf << "\n";
    }
  }
}

}  // namespace embfat
