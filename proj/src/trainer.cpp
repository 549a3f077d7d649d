#include "pianotree/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pianotree/batch.hpp"
#include "pianotree/log.hpp"

namespace pianotree {

void TrainConfig::check() const {
  if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
  if (!(lr_end > 0) || !(lr_end <= lr_start))
    throw ConfigError("train: require 0 < lr_end <= lr_start");
  if (!(tf_end >= 0) || !(tf_end <= tf_start) || !(tf_start <= 1))
    throw ConfigError("train: require 0 <= tf_end <= tf_start <= 1");
  if (beta_max < 0) throw ConfigError("train: beta_max must be >= 0");
  if (beta_warmup_steps < 0)
    throw ConfigError("train: beta_warmup_steps must be >= 0");
  if (max_epochs <= 0) throw ConfigError("train: max_epochs must be positive");
  if (!(split_ratio > 0) || !(split_ratio < 1))
    throw ConfigError("train: split_ratio must lie in (0,1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"lr_start", c.lr_start},
       {"lr_end", c.lr_end},
       {"tf_start", c.tf_start},
       {"tf_end", c.tf_end},
       {"beta_max", c.beta_max},
       {"beta_warmup_steps", c.beta_warmup_steps},
       {"max_epochs", c.max_epochs},
       {"seed", c.seed},
       {"split_ratio", c.split_ratio},
       {"grad_clip", c.grad_clip}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr_start = j.value("lr_start", d.lr_start);
  c.lr_end = j.value("lr_end", d.lr_end);
  c.tf_start = j.value("tf_start", d.tf_start);
  c.tf_end = j.value("tf_end", d.tf_end);
  c.beta_max = j.value("beta_max", d.beta_max);
  c.beta_warmup_steps = j.value("beta_warmup_steps", d.beta_warmup_steps);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.seed = j.value("seed", d.seed);
  c.split_ratio = j.value("split_ratio", d.split_ratio);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
}

double lr_at(const TrainConfig& c, long step, long horizon_steps) {
  if (step < 0) step = 0;
  if (horizon_steps <= 0) return c.lr_start;
  const double frac = static_cast<double>(step) / static_cast<double>(horizon_steps);
  const double lr = c.lr_start * std::pow(c.lr_end / c.lr_start, frac);
  return std::max(lr, c.lr_end);
}

double tf_rate_at(const TrainConfig& c, int epoch) {
  if (epoch < 0) epoch = 0;
  if (epoch >= c.max_epochs) return c.tf_end;
  const double frac = static_cast<double>(epoch) / static_cast<double>(c.max_epochs);
  return c.tf_start + (c.tf_end - c.tf_start) * frac;
}

double beta_at(const TrainConfig& c, long step) {
  if (step < 0) step = 0;
  if (c.beta_warmup_steps == 0 || step >= c.beta_warmup_steps) return c.beta_max;
  return c.beta_max * static_cast<double>(step) /
         static_cast<double>(c.beta_warmup_steps);
}

void Adam::init(const Params<float>& shape) {
  m.zero_like(shape);
  v.zero_like(shape);
  t = 0;
}

void Adam::step(Params<float>& params, const Params<float>& grad, double lr) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));

  std::vector<std::pair<float*, Eigen::Index>> ps, ms, vs;
  std::vector<std::pair<const float*, Eigen::Index>> gs;
  params.for_each([&](const std::string&, auto& x) { ps.emplace_back(x.data(), x.size()); });
  m.for_each([&](const std::string&, auto& x) { ms.emplace_back(x.data(), x.size()); });
  v.for_each([&](const std::string&, auto& x) { vs.emplace_back(x.data(), x.size()); });
  grad.for_each([&](const std::string&, const auto& x) { gs.emplace_back(x.data(), x.size()); });

  for (std::size_t i = 0; i < ps.size(); ++i) {
    float* p = ps[i].first;
    float* mm = ms[i].first;
    float* vv = vs[i].first;
    const float* g = gs[i].first;
    const Eigen::Index n = ps[i].second;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double gk = g[k];
      const double mk = beta1 * mm[k] + (1.0 - beta1) * gk;
      const double vk = beta2 * vv[k] + (1.0 - beta2) * gk * gk;
      mm[k] = static_cast<float>(mk);
      vv[k] = static_cast<float>(vk);
      p[k] -= static_cast<float>(lr * (mk / bc1) /
                                 (std::sqrt(vk / bc2) + eps));
    }
  }
}

double clip_grad_norm(Params<float>& grad, double max_norm) {
  double sq = 0;
  grad.for_each([&](const std::string&, const auto& t) {
    sq += t.template cast<double>().squaredNorm();
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm);
    grad.for_each([&](const std::string&, auto& t) { t *= scale; });
  }
  return norm;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 gen(nn::derive_seed(seed, 0x50c4u, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = gen() % i;  // deterministic Fisher-Yates
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_epoch_%04d.ptvae", epoch);
  return buf;
}

}  // namespace

TrainResult train(const ModelDims& dims, const TrainConfig& config,
                  const std::vector<SegmentRecord>& records,
                  const std::string& out_dir, const std::string& resume_path,
                  const StepCallback& callback) {
  dims.check();
  config.check();
  if (records.empty()) throw DataError("train: no training segments");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  Checkpoint ckpt;
  Adam adam;
  if (resume_path.empty()) {
    ckpt.init(dims, nn::derive_seed(config.seed, 0x1417u));
    ckpt.config = config;
    adam.init(ckpt.params);
  } else {
    ckpt = load_checkpoint(resume_path);
    if (!(ckpt.dims == dims))
      throw ConfigError("train: resume checkpoint dims do not match config");
    adam.init(ckpt.params);
    if (ckpt.has_adam) {
      adam.m = ckpt.adam_m;
      adam.v = ckpt.adam_v;
      adam.t = ckpt.adam_t;
    }
  }

  const std::string metrics_path = out_dir + "/metrics.jsonl";
  std::ofstream metrics(metrics_path,
                        resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw PipelineError("train: cannot write " + metrics_path);

  const long steps_per_epoch =
      (static_cast<long>(records.size()) + config.batch_size - 1) / config.batch_size;
  const long horizon = steps_per_epoch * config.max_epochs;

  Params<float> grad;
  grad.zero_like(ckpt.params);

  TrainResult result;
  result.steps = ckpt.step;
  bool stop = false;
  LossReport last{};

  for (int epoch = ckpt.epoch; epoch < config.max_epochs && !stop; ++epoch) {
    const double tf = tf_rate_at(config, epoch);
    const auto order = epoch_order(records.size(), config.seed, epoch);

    for (long b = 0; b < steps_per_epoch && !stop; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * config.batch_size;
      const std::size_t hi =
          std::min(records.size(), lo + static_cast<std::size_t>(config.batch_size));

      std::vector<const PolySegment*> items;
      std::vector<std::string> ids;
      items.reserve(hi - lo);
      ids.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        items.push_back(&records[order[i]].seg);
        ids.push_back(records[order[i]].id);
      }
      nn::Rng draw_rng(nn::derive_seed(config.seed, 0xd4a3u,
                                       static_cast<std::uint64_t>(ckpt.step)));
      std::vector<ItemDraws> draws;
      draws.reserve(items.size());
      for (const PolySegment* item : items)
        draws.push_back(draw_item(draw_rng, dims, item));

      const double lr = lr_at(config, ckpt.step, horizon);
      const double beta = beta_at(config, ckpt.step);

      grad.for_each([](const std::string&, auto& t) { t.setZero(); });
      LossReport rep =
          batch_loss_grad<float>(ckpt.params, items, draws, tf, beta, &grad);

      if (!std::isfinite(rep.total)) {
        std::string joined;
        for (const std::string& id : ids) joined += (joined.empty() ? "" : ",") + id;
        throw PipelineError("train: non-finite loss at step " +
                            std::to_string(ckpt.step) + " on batch [" + joined + "]");
      }

      clip_grad_norm(grad, config.grad_clip);
      adam.step(ckpt.params, grad, lr);
      ++ckpt.step;
      last = rep;

      nlohmann::json line = {{"step", ckpt.step},
                             {"epoch", epoch},
                             {"total", static_cast<double>(rep.total)},
                             {"recon_pitch", static_cast<double>(rep.recon_pitch)},
                             {"recon_duration", static_cast<double>(rep.recon_duration)},
                             {"kl", static_cast<double>(rep.kl)},
                             {"lr", lr},
                             {"tf", tf},
                             {"beta", beta},
                             {"batch", ids}};
      metrics << line.dump() << "\n";

      if (callback && !callback(ckpt.step, epoch, rep)) stop = true;
    }
    metrics.flush();

    ckpt.epoch = stop ? epoch : epoch + 1;
    ckpt.has_adam = true;
    ckpt.adam_m = adam.m;
    ckpt.adam_v = adam.v;
    ckpt.adam_t = adam.t;
    const std::string path = out_dir + "/" + checkpoint_name(ckpt.epoch);
    save_checkpoint(path, ckpt);
    log_info("train: wrote " + path + " at step " + std::to_string(ckpt.step));
    result.last_checkpoint = path;
    result.epochs = ckpt.epoch;
  }

  result.steps = ckpt.step;
  result.final_total = last.total;
  return result;
}

}  // namespace pianotree
