#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "pianotree/batch.hpp"
#include "pianotree/model.hpp"

using namespace pianotree;

namespace {

/// Varied batch: chords, an all-silent segment, a monophonic line, extremes.
std::vector<PolySegment> mixed_batch() {
  std::vector<PolySegment> segs;
  nn::Rng rng(201);
  for (int i = 0; i < 4; ++i) segs.push_back(ptest::random_segment(rng));
  segs.push_back(PolySegment());  // fully silent
  PolySegment mono;
  for (int t = 0; t < 32; t += 2) mono.onsets[t] = {{50 + t / 2, 2}};
  segs.push_back(mono);
  PolySegment edges;
  edges.onsets[0] = {{0, 32}, {127, 32}};
  edges.onsets[31] = {{64, 1}};
  segs.push_back(edges);
  return segs;
}

std::vector<ItemDraws> draw_all(std::uint64_t seed, const ModelDims& dims,
                                const std::vector<const PolySegment*>& items) {
  nn::Rng rng(seed);
  std::vector<ItemDraws> draws;
  for (const auto* seg : items) draws.push_back(draw_item(rng, dims, seg));
  return draws;
}

}  // namespace

TEST_CASE("batched loss and gradients equal the averaged reference") {
  Params<double> p;
  p.init(ModelDims::miniature(), 37);
  auto segs = mixed_batch();
  std::vector<const PolySegment*> items;
  for (const auto& s : segs) items.push_back(&s);
  const double B = static_cast<double>(items.size());
  auto draws = draw_all(211, p.dims, items);

  for (double tf : {1.0, 0.5, 0.0}) {
    Params<double> grad_ref, grad_bat;
    grad_ref.zero_like(p);
    grad_bat.zero_like(p);

    LossReportT<double> ref{};
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto r = item_loss_grad(p, *items[i], draws[i], tf, 0.2, &grad_ref, 1.0 / B);
      ref.total += r.total / B;
      ref.recon_pitch += r.recon_pitch / B;
      ref.recon_duration += r.recon_duration / B;
      ref.kl += r.kl / B;
    }
    auto bat = batch_loss_grad(p, items, draws, tf, 0.2, &grad_bat);

    CHECK(std::abs(bat.total - ref.total) < 1e-10);
    CHECK(std::abs(bat.recon_pitch - ref.recon_pitch) < 1e-10);
    CHECK(std::abs(bat.recon_duration - ref.recon_duration) < 1e-10);
    CHECK(std::abs(bat.kl - ref.kl) < 1e-10);

    // coefficient-wise comparison over the flattened tensor directories
    std::vector<std::string> names;
    std::vector<const double*> rp, bp;
    std::vector<Eigen::Index> ns;
    grad_ref.for_each([&](const std::string& name, const auto& t) {
      names.push_back(name);
      rp.push_back(t.data());
      ns.push_back(t.size());
    });
    std::size_t j = 0;
    grad_bat.for_each([&](const std::string& name, const auto& t) {
      REQUIRE(names[j++] == name);
      bp.push_back(t.data());
    });
    double worst = 0;
    for (std::size_t s = 0; s < rp.size(); ++s)
      for (Eigen::Index k = 0; k < ns[s]; ++k)
        worst = std::max(worst, std::abs(rp[s][k] - bp[s][k]));
    CHECK(worst < 1e-11);
  }
}

TEST_CASE("batched encode equals the reference encoder") {
  Params<double> p;
  p.init(ModelDims::miniature(), 41);
  auto segs = mixed_batch();
  std::vector<const PolySegment*> items;
  for (const auto& s : segs) items.push_back(&s);

  auto posts = batch_encode(p, items);
  REQUIRE(posts.size() == items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto ref = encode(p, *items[i]);
    CHECK((posts[i].mu - ref.mu).template lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((posts[i].sigma - ref.sigma).template lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("batched free-run decode equals the reference decoder") {
  Params<double> p;
  p.init(ModelDims::miniature(), 43);
  nn::Rng rng(221);
  const int n = 24;
  nn::Mat<double> z(p.dims.d_z, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p.dims.d_z; ++j) z(j, i) = rng.normal();

  auto batched = batch_decode(p, z);
  REQUIRE(batched.size() == static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto ref = decode(p, nn::Vec<double>(z.col(i)));
    CHECK(batched[static_cast<std::size_t>(i)] == ref.seg);
    CHECK(validate(batched[static_cast<std::size_t>(i)]).empty());
  }
}

TEST_CASE("batch rejects malformed inputs") {
  Params<double> p;
  p.init(ModelDims::miniature(), 47);
  PolySegment good;
  PolySegment bad;
  bad.onsets[0] = {{200, 4}};
  std::vector<const PolySegment*> items = {&good, &bad};
  auto draws = draw_all(231, p.dims, {&good, &good});
  CHECK_THROWS_AS(batch_loss_grad<double>(p, items, draws, 0.5, 0.1, nullptr), DataError);

  std::vector<const PolySegment*> one = {&good};
  CHECK_THROWS_AS(batch_loss_grad<double>(p, one, draws, 0.5, 0.1, nullptr), PipelineError);
  CHECK_THROWS_AS(
      batch_loss_grad(p, {}, {}, 0.5, 0.1, static_cast<Params<double>*>(nullptr)),
      PipelineError);
}
