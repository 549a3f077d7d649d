#pragma once

// Lane-batched implementations of the training-step math and of bulk
// encode/decode. Mathematically identical to looping the per-item reference
// in model.hpp, but reorganized so every matrix product runs over a whole
// batch of lanes at once; the reference stays the ground truth in tests.

#include <vector>

#include "pianotree/model.hpp"

namespace pianotree {

/// Mean loss over the batch; gradients of the mean accumulate into `grad`
/// (skipped when null). draws[i] must be drawn exactly as for the reference
/// path so both produce the same teacher-forcing decisions and noise.
template <class S>
LossReportT<S> batch_loss_grad(const Params<S>& p,
                               const std::vector<const PolySegment*>& items,
                               const std::vector<ItemDraws>& draws,
                               double tf_rate, double beta, Params<S>* grad);

template <class S>
std::vector<LatentPosteriorT<S>> batch_encode(
    const Params<S>& p, const std::vector<const PolySegment*>& items);

/// Free-running greedy decode of one latent per column of z.
template <class S>
std::vector<PolySegment> batch_decode(const Params<S>& p, const nn::Mat<S>& z);

extern template LossReportT<float> batch_loss_grad(
    const Params<float>&, const std::vector<const PolySegment*>&,
    const std::vector<ItemDraws>&, double, double, Params<float>*);
extern template LossReportT<double> batch_loss_grad(
    const Params<double>&, const std::vector<const PolySegment*>&,
    const std::vector<ItemDraws>&, double, double, Params<double>*);
extern template std::vector<LatentPosteriorT<float>> batch_encode(
    const Params<float>&, const std::vector<const PolySegment*>&);
extern template std::vector<LatentPosteriorT<double>> batch_encode(
    const Params<double>&, const std::vector<const PolySegment*>&);
extern template std::vector<PolySegment> batch_decode(const Params<float>&,
                                                      const nn::Mat<float>&);
extern template std::vector<PolySegment> batch_decode(const Params<double>&,
                                                      const nn::Mat<double>&);

}  // namespace pianotree
