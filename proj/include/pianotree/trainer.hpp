#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "pianotree/checkpoint.hpp"
#include "pianotree/dataset.hpp"
#include "pianotree/model.hpp"

namespace pianotree {

struct TrainConfig {
  int batch_size = 128;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  double tf_start = 0.8;
  double tf_end = 0.0;
  double beta_max = 0.1;
  long beta_warmup_steps = 10000;
  int max_epochs = 6;
  std::uint64_t seed = 0;
  double split_ratio = 0.9;
  double grad_clip = 5.0;  // global-norm ceiling, <= 0 disables

  void check() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Schedules. lr decays exponentially per step from lr_start, reaching lr_end
// at `horizon_steps` and flooring there; tf decays linearly per epoch from
// tf_start to tf_end over max_epochs; beta ramps linearly from 0 to beta_max
// over beta_warmup_steps.
double lr_at(const TrainConfig& c, long step, long horizon_steps);
double tf_rate_at(const TrainConfig& c, int epoch);
double beta_at(const TrainConfig& c, long step);

/// Adaptive-moment optimizer with bias correction.
struct Adam {
  Params<float> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void init(const Params<float>& shape);
  void step(Params<float>& params, const Params<float>& grad, double lr);
};

/// Returns the pre-clip global norm; scales `grad` down when above the cap.
double clip_grad_norm(Params<float>& grad, double max_norm);

struct TrainResult {
  long steps = 0;
  int epochs = 0;
  float final_total = 0;
  std::string last_checkpoint;
};

/// Called after every optimizer update; return false to stop training early
/// (a final checkpoint is still written).
using StepCallback =
    std::function<bool(long step, int epoch, const LossReport& rep)>;

/// Runs the optimization loop over `records` (already split and augmented).
/// Writes `metrics.jsonl` and one checkpoint per epoch under `out_dir`;
/// `resume_path` continues a previous run, appending to its metrics log.
TrainResult train(const ModelDims& dims, const TrainConfig& config,
                  const std::vector<SegmentRecord>& records,
                  const std::string& out_dir,
                  const std::string& resume_path = "",
                  const StepCallback& callback = nullptr);

}  // namespace pianotree
