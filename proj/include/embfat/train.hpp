#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "embfat/model.hpp"
#include "embfat/perturb.hpp"

namespace embfat {

enum class TrainerKind : std::uint32_t {
  kStandard = 0,
  kPgdAt = 1,
  kFat = 2,
  kFatInterval = 3,
};

const char* trainer_name(TrainerKind kind);
TrainerKind trainer_from_name(const std::string& name);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

// Bias-corrected adaptive-moment update of a single tensor, in place.
// t is the 1-based step count.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                 std::uint64_t t, const AdamHyper& hp);

class Adam {
 public:
  Adam(const ModelParams& params, AdamHyper hp);
  void step(ModelParams& params, const ParamGrads& grads);
  std::uint64_t steps() const { return t_; }

 private:
  AdamHyper hp_;
  std::uint64_t t_ = 0;
  Tensor m_[5], v_[5];
};

struct TrainConfig {
  TrainerKind kind = TrainerKind::kFat;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  AdamHyper adam;
  PerturbConfig perturb;
  std::size_t interval = 1;       // fat-interval only
  std::uint64_t seed = 1;
  bool history_init = true;       // off reproduces the random-init ablation arm
  std::size_t probe_count = 100;  // similarity diagnostic subset
};

struct EpochStats {
  double mean_loss = 0.0;
  std::uint64_t backprops = 0;
  bool has_similarity = false;
  double dir_similarity = 0.0;  // mean over probe samples vs previous epoch
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::uint64_t total_backprops = 0;
  double wall_seconds = 0.0;
  // FAT similarity diagnostic, row per probe sample, one column per epoch;
  // NaN where undefined (epoch 0, or no prior perturbation of matching shape).
  std::vector<std::int64_t> probe_ids;
  std::vector<std::vector<double>> probe_sims;
};

// Runs the configured regime in place on params. Deterministic per config+seed.
TrainReport train(ModelParams& params, const Dataset& data, const TrainConfig& cfg);

// Closed-form back-propagation count for a full training run.
std::uint64_t expected_backprops(TrainerKind kind, std::size_t n, std::size_t epochs,
                                 std::size_t pgd_steps, std::size_t interval,
                                 std::size_t batch_size);

void save_report(const std::string& path, const TrainReport& report,
                 const TrainConfig& cfg);

}  // namespace embfat
