#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pianotree/batch.hpp"
#include "pianotree/model.hpp"
#include "pianotree/segment.hpp"

using namespace pianotree;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

PolySegment random_segment(nn::Rng& rng, int num_steps) {
  PolySegment seg(num_steps);
  for (int t = 0; t < num_steps; ++t) {
    if (rng.uniform() < 0.35) continue;  // silent step
    const int k = 1 + static_cast<int>(rng.bits() % 3);
    for (int j = 0; j < k; ++j) {
      const int pitch = 40 + static_cast<int>(rng.bits() % 48);
      const int max_d = std::min(8, num_steps - t);
      const int dur = 1 + static_cast<int>(rng.bits() % max_d);
      seg.onsets[t].push_back({pitch, dur});
    }
  }
  return canonicalize(seg);
}

struct Timing {
  double reference_s = 0;
  double batched_s = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"throughput of the lane-batched kernels vs the per-item reference"};
  int batch = 16;
  int rounds = 3;
  bool full = false;
  std::uint64_t seed = 0;
  app.add_option("--batch", batch, "items per step")->check(CLI::PositiveNumber);
  app.add_option("--rounds", rounds, "timed repetitions")->check(CLI::PositiveNumber);
  app.add_flag("--full", full, "production dimensions (slow reference path)");
  app.add_option("--seed", seed, "corpus/model seed");
  CLI11_PARSE(app, argc, argv);

  ModelDims dims;
  if (!full) {
    // quarter scale: big enough that GEMM dominates, small enough to finish fast
    dims = {32, 128, 256, 128, 64, 128, 128, 256, 16, 16};
  }
  Params<float> p;
  p.init(dims, nn::derive_seed(seed, 0xbe9cu));

  nn::Rng corpus_rng(nn::derive_seed(seed, 0xc0b5u));
  std::vector<PolySegment> corpus;
  std::vector<const PolySegment*> items;
  for (int i = 0; i < batch; ++i) {
    corpus.push_back(random_segment(corpus_rng, kSegmentSteps));
    items.push_back(&corpus.back());
  }
  // stable pointers
  items.clear();
  for (const auto& seg : corpus) items.push_back(&seg);

  std::printf("dims: e_n=%d e_sn=%d e_sc=%d d_z=%d  batch=%d rounds=%d\n",
              dims.e_n, dims.e_sn, dims.e_sc, dims.d_z, batch, rounds);

  // ---- training step: loss + full gradient
  Timing train_t;
  float ref_total = 0, bat_total = 0;
  for (int r = 0; r < rounds; ++r) {
    std::vector<ItemDraws> draws;
    nn::Rng draw_rng(nn::derive_seed(seed, 0xd4a3u, static_cast<std::uint64_t>(r)));
    for (int i = 0; i < batch; ++i)
      draws.push_back(draw_item(draw_rng, dims, items[static_cast<std::size_t>(i)]));

    Params<float> grad_ref;
    grad_ref.zero_like(p);
    auto t0 = Clock::now();
    ref_total = 0;
    for (int i = 0; i < batch; ++i) {
      auto rep = item_loss_grad(p, *items[static_cast<std::size_t>(i)],
                                draws[static_cast<std::size_t>(i)], 0.6, 0.1,
                                &grad_ref, 1.0f / static_cast<float>(batch));
      ref_total += rep.total / static_cast<float>(batch);
    }
    train_t.reference_s += seconds_since(t0);

    Params<float> grad_bat;
    grad_bat.zero_like(p);
    t0 = Clock::now();
    auto rep = batch_loss_grad(p, items, draws, 0.6, 0.1, &grad_bat);
    train_t.batched_s += seconds_since(t0);
    bat_total = rep.total;
  }
  const double n_items = static_cast<double>(batch) * rounds;
  std::printf("train step   reference: %8.1f items/s   batched: %8.1f items/s   speedup %.2fx\n",
              n_items / train_t.reference_s, n_items / train_t.batched_s,
              train_t.reference_s / train_t.batched_s);
  std::printf("             loss check: reference %.6f vs batched %.6f (|diff| %.2e)\n",
              ref_total, bat_total, std::abs(ref_total - bat_total));

  // ---- evaluation: encode + greedy decode
  Timing eval_t;
  long mismatches = 0;
  for (int r = 0; r < rounds; ++r) {
    auto t0 = Clock::now();
    std::vector<PolySegment> ref_out;
    for (int i = 0; i < batch; ++i) {
      auto post = encode(p, *items[static_cast<std::size_t>(i)]);
      ref_out.push_back(decode(p, post.mu).seg);
    }
    eval_t.reference_s += seconds_since(t0);

    t0 = Clock::now();
    auto posts = batch_encode(p, items);
    nn::Mat<float> z(dims.d_z, batch);
    for (int i = 0; i < batch; ++i) z.col(i) = posts[static_cast<std::size_t>(i)].mu;
    auto bat_out = batch_decode(p, z);
    eval_t.batched_s += seconds_since(t0);

    for (int i = 0; i < batch; ++i)
      if (!(ref_out[static_cast<std::size_t>(i)] == bat_out[static_cast<std::size_t>(i)]))
        ++mismatches;
  }
  std::printf("encode+decode reference: %8.1f items/s   batched: %8.1f items/s   speedup %.2fx\n",
              n_items / eval_t.reference_s, n_items / eval_t.batched_s,
              eval_t.reference_s / eval_t.batched_s);
  std::printf("             output check: %ld/%ld segments differ\n", mismatches,
              static_cast<long>(n_items));
  return mismatches == 0 ? 0 : 1;
}
