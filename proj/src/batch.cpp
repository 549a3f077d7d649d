#include "pianotree/batch.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pianotree/log.hpp"
#include "pianotree/segment.hpp"

namespace pianotree {

namespace {

template <class S> using Vec = nn::Vec<S>;
template <class S> using Mat = nn::Mat<S>;
template <class S> using Row = nn::RowArr<S>;

template <class S>
Mat<S> zero_inactive(const Mat<S>& x, const Row<S>& m) {
  return (x.array().rowwise() * m).matrix();
}

// h <- h_new on active lanes, unchanged elsewhere
template <class S>
void keep_where(Mat<S>& h, const Mat<S>& h_new, const Row<S>& m) {
  h.array() = h_new.array().rowwise() * m + h.array().rowwise() * (S(1) - m);
}

template <class S>
S ce(S prob) {
  return -std::log(std::max(prob, std::numeric_limits<S>::min()));
}

// ------------------------------------------------- lane summaries

/// Lockstep bidirectional pitch-axis summary over many lanes at once, the
/// batched form of the shared simu-note summarizer. Lanes shorter than the
/// longest freeze their hidden state once their tokens run out; the reverse
/// direction walks each lane from its own last token.
template <class S>
struct LaneSummary {
  std::vector<std::vector<EmbedToken>> tokens;
  std::vector<Row<S>> mask;  // per lockstep step
  std::vector<nn::GruBatchCache<S>> f_cells, b_cells;
  Mat<S> out;  // e_sn x lanes
};

template <class S>
void summarize_lanes(const Params<S>& p,
                     std::vector<std::vector<EmbedToken>> tokens,
                     LaneSummary<S>& s, bool keep_tape) {
  const int H = p.dims.h_p_enc;
  const int L = static_cast<int>(tokens.size());
  int max_len = 0;
  for (const auto& lane : tokens)
    max_len = std::max(max_len, static_cast<int>(lane.size()));
  s.tokens = std::move(tokens);
  s.mask.assign(max_len, Row<S>());
  if (keep_tape) {
    s.f_cells.resize(max_len);
    s.b_cells.resize(max_len);
  }

  Mat<S> hf = Mat<S>::Zero(H, L), hb = Mat<S>::Zero(H, L);
  Mat<S> xf(p.dims.e_n, L), xb(p.dims.e_n, L);
  for (int step = 0; step < max_len; ++step) {
    Row<S>& m = s.mask[step];
    m = Row<S>::Zero(L);
    xf.setZero();
    xb.setZero();
#pragma omp parallel for schedule(static)
    for (int l = 0; l < L; ++l) {
      const auto& lane = s.tokens[l];
      const int len = static_cast<int>(lane.size());
      if (step >= len) continue;
      m(l) = S(1);
      xf.col(l) = embed_token(p.emb, lane[step]);
      xb.col(l) = embed_token(p.emb, lane[len - 1 - step]);
    }
    Mat<S> hf_new = nn::gru_forward_batch(p.enc_pitch_f, xf, hf,
                                          keep_tape ? &s.f_cells[step] : nullptr);
    keep_where(hf, hf_new, m);
    Mat<S> hb_new = nn::gru_forward_batch(p.enc_pitch_b, xb, hb,
                                          keep_tape ? &s.b_cells[step] : nullptr);
    keep_where(hb, hb_new, m);
  }
  s.out.resize(2 * H, L);
  s.out.topRows(H) = hf;
  s.out.bottomRows(H) = hb;
}

template <class S>
void summarize_lanes_backward(const Params<S>& p, const LaneSummary<S>& s,
                              const Mat<S>& dout, Params<S>& grad) {
  const int H = p.dims.h_p_enc;
  const int L = static_cast<int>(s.tokens.size());
  const int max_len = static_cast<int>(s.mask.size());
  std::vector<std::vector<Vec<S>>> demb(L);
  for (int l = 0; l < L; ++l)
    demb[l].assign(s.tokens[l].size(), Vec<S>::Zero(p.dims.e_n));

  Mat<S> dhf = dout.topRows(H), dhb = dout.bottomRows(H);
  for (int step = max_len - 1; step >= 0; --step) {
    const Row<S>& m = s.mask[step];
    Mat<S> dh_prev_f = Mat<S>::Zero(H, L);
    Mat<S> dxf = nn::gru_backward_batch(p.enc_pitch_f, s.f_cells[step],
                                        zero_inactive(dhf, m), dh_prev_f,
                                        grad.enc_pitch_f);
    dhf = dh_prev_f + zero_inactive(dhf, (S(1) - m).eval());
    Mat<S> dh_prev_b = Mat<S>::Zero(H, L);
    Mat<S> dxb = nn::gru_backward_batch(p.enc_pitch_b, s.b_cells[step],
                                        zero_inactive(dhb, m), dh_prev_b,
                                        grad.enc_pitch_b);
    dhb = dh_prev_b + zero_inactive(dhb, (S(1) - m).eval());
#pragma omp parallel for schedule(static)
    for (int l = 0; l < L; ++l) {
      const int len = static_cast<int>(s.tokens[l].size());
      if (step >= len) continue;
      demb[l][step] += dxf.col(l);
      demb[l][len - 1 - step] += dxb.col(l);
    }
  }
  for (int l = 0; l < L; ++l)
    for (std::size_t i = 0; i < s.tokens[l].size(); ++i)
      embed_token_backward(grad.emb, s.tokens[l][i], demb[l][i]);
}

// ------------------------------------------------------- encoder

/// Lane l = t*B + i, so the time GRU reads contiguous column blocks.
template <class S>
struct EncBatch {
  int T = 0, B = 0;
  LaneSummary<S> pitch;
  std::vector<nn::GruBatchCache<S>> time_f, time_b;
  Mat<S> sc;
  Mat<S> mu, logsig, sigma;
};

template <class S>
void encode_batch_fwd(const Params<S>& p,
                      const std::vector<const PolySegment*>& items,
                      EncBatch<S>& e, bool keep_tape) {
  const ModelDims& d = p.dims;
  const int B = static_cast<int>(items.size());
  const int T = items[0]->num_steps;
  e.T = T;
  e.B = B;
  std::vector<std::vector<EmbedToken>> tokens(
      static_cast<std::size_t>(T) * B);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < B; ++i)
      tokens[static_cast<std::size_t>(t) * B + i] =
          onset_tokens(items[i]->onsets[t]);
  summarize_lanes(p, std::move(tokens), e.pitch, keep_tape);

  const int H = d.h_t_enc;
  if (keep_tape) {
    e.time_f.resize(T);
    e.time_b.resize(T);
  }
  Mat<S> hf = Mat<S>::Zero(H, B), hb = Mat<S>::Zero(H, B);
  for (int t = 0; t < T; ++t)
    hf = nn::gru_forward_batch(p.enc_time_f,
                               e.pitch.out.middleCols(t * B, B).eval(), hf,
                               keep_tape ? &e.time_f[t] : nullptr);
  for (int t = T - 1; t >= 0; --t)
    hb = nn::gru_forward_batch(p.enc_time_b,
                               e.pitch.out.middleCols(t * B, B).eval(), hb,
                               keep_tape ? &e.time_b[t] : nullptr);
  e.sc.resize(2 * H, B);
  e.sc.topRows(H) = hf;
  e.sc.bottomRows(H) = hb;
  e.mu = p.fc_mu.forward(e.sc);
  e.logsig = p.fc_logsigma.forward(e.sc);
  e.sigma = e.logsig.array().exp().matrix();
}

template <class S>
void encode_batch_bwd(const Params<S>& p, const EncBatch<S>& e,
                      const Mat<S>& dmu, const Mat<S>& dlogsig,
                      Params<S>& grad) {
  const int H = p.dims.h_t_enc;
  Mat<S> dsc = p.fc_mu.backward(e.sc, dmu, grad.fc_mu);
  dsc += p.fc_logsigma.backward(e.sc, dlogsig, grad.fc_logsigma);

  Mat<S> dsn = Mat<S>::Zero(p.dims.e_sn, e.T * e.B);
  Mat<S> dh = dsc.topRows(H);
  for (int t = e.T - 1; t >= 0; --t) {
    Mat<S> dh_prev = Mat<S>::Zero(H, e.B);
    dsn.middleCols(t * e.B, e.B) += nn::gru_backward_batch(
        p.enc_time_f, e.time_f[t], dh, dh_prev, grad.enc_time_f);
    dh = dh_prev;
  }
  dh = dsc.bottomRows(H);
  for (int t = 0; t < e.T; ++t) {
    Mat<S> dh_prev = Mat<S>::Zero(H, e.B);
    dsn.middleCols(t * e.B, e.B) += nn::gru_backward_batch(
        p.enc_time_b, e.time_b[t], dh, dh_prev, grad.enc_time_b);
    dh = dh_prev;
  }
  summarize_lanes_backward(p, e.pitch, dsn, grad);
}

// ------------------------------------------------------- decoder

template <class S>
struct PosBatch {
  std::vector<EmbedToken> in_tokens;  // meaningful on active lanes
  Row<S> active, real;                // k <= K_i / k < K_i
  bool any_real = false;
  std::vector<int> target;            // -1 on inactive lanes
  nn::GruBatchCache<S> pitch_cell;
  Mat<S> pitch_h, probs;
  Mat<S> dur_cat;                     // zeroed on non-real lanes
  std::array<nn::GruBatchCache<S>, kDurationBits> dur_cells;
  std::array<Mat<S>, kDurationBits> dur_h, bit_probs;
  std::vector<DurationCode> bit_targets;
};

template <class S>
struct OnsetBatch {
  nn::GruBatchCache<S> time_cell;
  Mat<S> time_h;
  std::vector<PosBatch<S>> positions;
  LaneSummary<S> sum;
  bool has_sum = false;
};

template <class S>
struct DecBatch {
  S recon_pitch = 0, recon_duration = 0;
  std::vector<OnsetBatch<S>> onsets;
};

/// Teacher-aligned lockstep decode: every lane walks its own teacher
/// structure, padded to the longest onset with inactive positions. Hidden
/// states of finished lanes keep evolving on zero inputs; nothing downstream
/// reads them, and masked gradient seeds keep the backward pass exact.
template <class S>
void decode_batch_teacher(const Params<S>& p, const Mat<S>& z,
                          const std::vector<const PolySegment*>& items,
                          const std::vector<ItemDraws>& draws, double tf_rate,
                          DecBatch<S>& out) {
  const ModelDims& d = p.dims;
  const int B = static_cast<int>(items.size());
  const int T = items[0]->num_steps;
  out.onsets.resize(T);

  Mat<S> sc_h = p.fc_z2dec.forward(z);
  Mat<S> time_in = p.sos_sn.replicate(1, B);

  std::vector<std::vector<Note>> teacher_notes(B), model_notes(B);
  std::vector<EmbedToken> next_in(B);
  std::vector<char> model_eos(B);
  std::vector<DurationCode> teacher_code(B), argmax_code(B);
  std::vector<int> argmax(B), prev_bit(B);

  for (int t = 0; t < T; ++t) {
    OnsetBatch<S>& ob = out.onsets[t];
    sc_h = nn::gru_forward_batch(p.dec_time, time_in, sc_h, &ob.time_cell);
    ob.time_h = sc_h;
    Mat<S> pitch_h = p.fc_time2pitch.forward(sc_h);

    int max_k = 0;
    for (int i = 0; i < B; ++i) {
      teacher_notes[i] = items[i]->onsets[t];
      if (static_cast<int>(teacher_notes[i].size()) > d.max_simu_notes) {
        log_warn("decode: onset with " +
                 std::to_string(teacher_notes[i].size()) + " notes truncated to " +
                 std::to_string(d.max_simu_notes));
        teacher_notes[i].resize(d.max_simu_notes);
      }
      max_k = std::max(max_k, static_cast<int>(teacher_notes[i].size()));
      model_notes[i].clear();
      model_eos[i] = 0;
      next_in[i] = sos_token();
    }

    for (int k = 0; k <= max_k; ++k) {
      ob.positions.emplace_back();
      PosBatch<S>& pb = ob.positions.back();
      pb.in_tokens = next_in;
      pb.active = Row<S>::Zero(B);
      pb.real = Row<S>::Zero(B);
      pb.target.assign(B, -1);
      pb.bit_targets.assign(B, DurationCode{});

      Mat<S> x = Mat<S>::Zero(d.e_n, B);
      for (int i = 0; i < B; ++i) {
        const int K = static_cast<int>(teacher_notes[i].size());
        if (k > K) continue;
        pb.active(i) = S(1);
        x.col(i) = embed_token(p.emb, next_in[i]);
        if (k < K) {
          pb.real(i) = S(1);
          pb.any_real = true;
          pb.target[i] = teacher_notes[i][k].pitch;
          teacher_code[i] = encode_duration(teacher_notes[i][k].duration);
          pb.bit_targets[i] = teacher_code[i];
        } else {
          pb.target[i] = kPitchEos;
        }
      }
      pitch_h = nn::gru_forward_batch(p.dec_pitch, x, pitch_h, &pb.pitch_cell);
      pb.pitch_h = pitch_h;
      pb.probs = nn::softmax_cols(p.fc_pitch.forward(pitch_h));
      for (int i = 0; i < B; ++i) {
        if (pb.target[i] < 0) continue;
        out.recon_pitch += ce(pb.probs(pb.target[i], i));
        if (pb.real(i) > S(0)) pb.probs.col(i).maxCoeff(&argmax[i]);
      }

      if (pb.any_real) {
        pb.dur_cat.resize(d.h_p_dec + kPitchClasses, B);
        pb.dur_cat.topRows(d.h_p_dec) = zero_inactive(pitch_h, pb.real);
        pb.dur_cat.bottomRows(kPitchClasses) = zero_inactive(pb.probs, pb.real);
        Mat<S> dh = p.fc_dur_init.forward(pb.dur_cat);
        std::fill(prev_bit.begin(), prev_bit.end(), 2);
        for (int r = 0; r < kDurationBits; ++r) {
          Mat<S> x3 = Mat<S>::Zero(kBitInputs, B);
          for (int i = 0; i < B; ++i)
            if (pb.real(i) > S(0)) x3(prev_bit[i], i) = S(1);
          dh = nn::gru_forward_batch(p.dec_dur, x3, dh, &pb.dur_cells[r]);
          pb.dur_h[r] = dh;
          pb.bit_probs[r] = nn::softmax_cols(p.fc_bit.forward(dh));
          for (int i = 0; i < B; ++i) {
            if (!(pb.real(i) > S(0))) continue;
            const int tgt = teacher_code[i][r];
            out.recon_duration += ce(pb.bit_probs[r](tgt, i));
            argmax_code[i][r] = static_cast<std::uint8_t>(
                pb.bit_probs[r](1, i) > pb.bit_probs[r](0, i) ? 1 : 0);
            prev_bit[i] = tgt;  // chain is teacher-forced under a teacher
          }
        }
        for (int i = 0; i < B; ++i) {
          if (!(pb.real(i) > S(0))) continue;
          if (argmax[i] == kPitchEos) model_eos[i] = 1;
          if (!model_eos[i])
            model_notes[i].push_back({argmax[i], decode_duration(argmax_code[i])});
          EmbedToken model_tok = argmax[i] == kPitchEos
                                     ? eos_token()
                                     : EmbedToken{argmax[i], true, argmax_code[i]};
          bool force = draws[i].pitch_coins[t][k] < tf_rate;
          next_in[i] = force ? note_token(teacher_notes[i][k]) : model_tok;
        }
      }
    }

    if (t + 1 < T) {
      std::vector<std::vector<EmbedToken>> sum_tokens(B);
      for (int i = 0; i < B; ++i) {
        bool force = draws[i].time_coins[t] < tf_rate;
        sum_tokens[i] = onset_tokens(force ? teacher_notes[i] : model_notes[i]);
      }
      summarize_lanes(p, std::move(sum_tokens), ob.sum, true);
      ob.has_sum = true;
      time_in = ob.sum.out;
    }
  }
}

template <class S>
Mat<S> decode_batch_backward(const Params<S>& p, const Mat<S>& z,
                             const DecBatch<S>& fwd, Params<S>& grad, S scale) {
  const ModelDims& d = p.dims;
  const int T = static_cast<int>(fwd.onsets.size());
  const int B = static_cast<int>(z.cols());
  Mat<S> dsc = Mat<S>::Zero(d.h_t_dec, B);
  Mat<S> dsum = Mat<S>::Zero(d.e_sn, B);

  for (int t = T - 1; t >= 0; --t) {
    const OnsetBatch<S>& ob = fwd.onsets[t];
    if (ob.has_sum) summarize_lanes_backward(p, ob.sum, dsum, grad);

    Mat<S> dph = Mat<S>::Zero(d.h_p_dec, B);
    for (int k = static_cast<int>(ob.positions.size()) - 1; k >= 0; --k) {
      const PosBatch<S>& pb = ob.positions[k];
      Mat<S> dprobs = Mat<S>::Zero(kPitchClasses, B);
      Mat<S> dph_local = Mat<S>::Zero(d.h_p_dec, B);

      if (pb.any_real) {
        Mat<S> ddh = Mat<S>::Zero(d.h_d_dec, B);
        for (int r = kDurationBits - 1; r >= 0; --r) {
          Mat<S> dy = Mat<S>::Zero(2, B);
          for (int i = 0; i < B; ++i) {
            if (!(pb.real(i) > S(0))) continue;
            dy.col(i) = pb.bit_probs[r].col(i) * scale;
            dy(pb.bit_targets[i][r], i) -= scale;
          }
          ddh += p.fc_bit.backward(pb.dur_h[r], dy, grad.fc_bit);
          Mat<S> dh_prev = Mat<S>::Zero(d.h_d_dec, B);
          nn::gru_backward_batch(p.dec_dur, pb.dur_cells[r], ddh, dh_prev,
                                 grad.dec_dur);
          ddh = dh_prev;
        }
        Mat<S> dcat = p.fc_dur_init.backward(pb.dur_cat, ddh, grad.fc_dur_init);
        dph_local += dcat.topRows(d.h_p_dec);
        dprobs += dcat.bottomRows(kPitchClasses);
      }

      Mat<S> dv(kPitchClasses, B);
      for (int i = 0; i < B; ++i) {
        if (pb.target[i] < 0) {
          dv.col(i).setZero();
          continue;
        }
        dv.col(i) = pb.probs.col(i) * scale;
        dv(pb.target[i], i) -= scale;
      }
      dv += nn::softmax_backward_cols(pb.probs, dprobs);
      dph_local += p.fc_pitch.backward(pb.pitch_h, dv, grad.fc_pitch);

      Mat<S> dh_prev = Mat<S>::Zero(d.h_p_dec, B);
      Mat<S> dx = nn::gru_backward_batch(p.dec_pitch, pb.pitch_cell,
                                         (dph + dph_local).eval(), dh_prev,
                                         grad.dec_pitch);
      for (int i = 0; i < B; ++i)
        if (pb.active(i) > S(0))
          embed_token_backward(grad.emb, pb.in_tokens[i], dx.col(i).eval());
      dph = dh_prev;
    }

    Mat<S> dtime_h = p.fc_time2pitch.backward(ob.time_h, dph, grad.fc_time2pitch);
    dtime_h += dsc;
    dsc.setZero();
    Mat<S> dtime_in = nn::gru_backward_batch(p.dec_time, ob.time_cell, dtime_h,
                                             dsc, grad.dec_time);
    if (t == 0) {
      grad.sos_sn += dtime_in.rowwise().sum();
    } else {
      dsum = dtime_in;
    }
  }
  return p.fc_z2dec.backward(z, dsc, grad.fc_z2dec);
}

}  // namespace

// -------------------------------------------------------------- public

template <class S>
LossReportT<S> batch_loss_grad(const Params<S>& p,
                               const std::vector<const PolySegment*>& items,
                               const std::vector<ItemDraws>& draws,
                               double tf_rate, double beta, Params<S>* grad) {
  const ModelDims& d = p.dims;
  const int B = static_cast<int>(items.size());
  if (B == 0) throw PipelineError("batch: empty batch");
  if (static_cast<int>(draws.size()) != B)
    throw PipelineError("batch: draws do not match items");
  const int T = items[0]->num_steps;
  for (const PolySegment* it : items) {
    if (!it || it->num_steps != T)
      throw PipelineError("batch: items must share one step count");
    if (!is_valid(*it)) throw DataError("batch: invalid segment");
  }

  EncBatch<S> enc;
  encode_batch_fwd(p, items, enc, grad != nullptr);

  Mat<S> eps(d.d_z, B);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < d.d_z; ++j)
      eps(j, i) = static_cast<S>(draws[i].eps[j]);
  Mat<S> z = enc.mu + (enc.sigma.array() * eps.array()).matrix();

  DecBatch<S> dec;
  decode_batch_teacher(p, z, items, draws, tf_rate, dec);

  LossReportT<S> rep;
  rep.beta = static_cast<S>(beta);
  const S inv_b = S(1) / static_cast<S>(B);
  S kl = S(0.5) * (enc.mu.array().square() + enc.sigma.array().square() -
                   S(1) - S(2) * enc.logsig.array())
                      .sum();
  rep.recon_pitch = dec.recon_pitch * inv_b;
  rep.recon_duration = dec.recon_duration * inv_b;
  rep.kl = kl * inv_b;
  rep.total = rep.recon_pitch + rep.recon_duration + rep.beta * rep.kl;

  if (grad) {
    const S scale = inv_b;
    Mat<S> dz = decode_batch_backward(p, z, dec, *grad, scale);
    const S bkl = scale * rep.beta;
    Mat<S> dmu = dz + (bkl * enc.mu.array()).matrix();
    Mat<S> dlogsig = (dz.array() * eps.array() * enc.sigma.array() +
                      bkl * (enc.sigma.array().square() - S(1)))
                         .matrix();
    encode_batch_bwd(p, enc, dmu, dlogsig, *grad);
  }
  return rep;
}

template <class S>
std::vector<LatentPosteriorT<S>> batch_encode(
    const Params<S>& p, const std::vector<const PolySegment*>& items) {
  std::vector<LatentPosteriorT<S>> out(items.size());
  constexpr std::size_t kChunk = 128;  // bounds transient lane memory
  for (std::size_t base = 0; base < items.size(); base += kChunk) {
    const std::size_t n = std::min(kChunk, items.size() - base);
    std::vector<const PolySegment*> part(items.begin() + base,
                                         items.begin() + base + n);
    const int T = part[0]->num_steps;
    for (const PolySegment* it : part) {
      if (!it || it->num_steps != T)
        throw PipelineError("batch: items must share one step count");
      if (!is_valid(*it)) throw DataError("encode: invalid segment");
    }
    EncBatch<S> enc;
    encode_batch_fwd(p, part, enc, false);
    for (std::size_t i = 0; i < n; ++i)
      out[base + i] = {enc.mu.col(static_cast<Eigen::Index>(i)),
                       enc.sigma.col(static_cast<Eigen::Index>(i))};
  }
  return out;
}

template <class S>
std::vector<PolySegment> batch_decode(const Params<S>& p, const Mat<S>& z) {
  const ModelDims& d = p.dims;
  const int B = static_cast<int>(z.cols());
  const int T = kSegmentSteps;
  if (z.rows() != d.d_z) throw PipelineError("decode: latent size mismatch");
  std::vector<PolySegment> segs(B, PolySegment(T));
  if (B == 0) return segs;

  Mat<S> sc_h = p.fc_z2dec.forward(z);
  Mat<S> time_in = p.sos_sn.replicate(1, B);
  std::vector<EmbedToken> next_in(B);
  std::vector<char> done(B);
  std::vector<std::vector<Note>> model_notes(B);
  std::vector<int> argmax(B), prev_bit(B);
  std::vector<DurationCode> code(B);

  for (int t = 0; t < T; ++t) {
    sc_h = nn::gru_forward_batch(p.dec_time, time_in, sc_h);
    Mat<S> pitch_h = p.fc_time2pitch.forward(sc_h);
    for (int i = 0; i < B; ++i) {
      done[i] = 0;
      model_notes[i].clear();
      next_in[i] = sos_token();
    }

    for (int k = 0; k < d.max_simu_notes; ++k) {
      if (std::all_of(done.begin(), done.end(), [](char c) { return c != 0; }))
        break;

      Mat<S> x = Mat<S>::Zero(d.e_n, B);
      for (int i = 0; i < B; ++i)
        if (!done[i]) x.col(i) = embed_token(p.emb, next_in[i]);
      pitch_h = nn::gru_forward_batch(p.dec_pitch, x, pitch_h);
      Mat<S> probs = nn::softmax_cols(p.fc_pitch.forward(pitch_h));

      Row<S> chain = Row<S>::Zero(B);
      bool any = false;
      for (int i = 0; i < B; ++i) {
        if (done[i]) continue;
        probs.col(i).maxCoeff(&argmax[i]);
        if (argmax[i] == kPitchEos) {
          done[i] = 1;
          continue;
        }
        chain(i) = S(1);
        any = true;
      }
      if (!any) continue;

      Mat<S> cat(d.h_p_dec + kPitchClasses, B);
      cat.topRows(d.h_p_dec) = zero_inactive(pitch_h, chain);
      cat.bottomRows(kPitchClasses) = zero_inactive(probs, chain);
      Mat<S> dh = p.fc_dur_init.forward(cat);
      std::fill(prev_bit.begin(), prev_bit.end(), 2);
      for (int r = 0; r < kDurationBits; ++r) {
        Mat<S> x3 = Mat<S>::Zero(kBitInputs, B);
        for (int i = 0; i < B; ++i)
          if (chain(i) > S(0)) x3(prev_bit[i], i) = S(1);
        dh = nn::gru_forward_batch(p.dec_dur, x3, dh);
        Mat<S> bp = nn::softmax_cols(p.fc_bit.forward(dh));
        for (int i = 0; i < B; ++i) {
          if (!(chain(i) > S(0))) continue;
          code[i][r] = static_cast<std::uint8_t>(bp(1, i) > bp(0, i) ? 1 : 0);
          prev_bit[i] = code[i][r];
        }
      }
      for (int i = 0; i < B; ++i) {
        if (!(chain(i) > S(0))) continue;
        model_notes[i].push_back({argmax[i], decode_duration(code[i])});
        next_in[i] = {argmax[i], true, code[i]};
      }
    }

    std::vector<std::vector<EmbedToken>> sum_tokens(B);
    for (int i = 0; i < B; ++i) {
      segs[i].onsets[t] = model_notes[i];
      sum_tokens[i] = onset_tokens(model_notes[i]);
    }
    if (t + 1 < T) {
      LaneSummary<S> sum;
      summarize_lanes(p, std::move(sum_tokens), sum, false);
      time_in = sum.out;
    }
  }
  for (PolySegment& s : segs) s = canonicalize(s);
  return segs;
}

template LossReportT<float> batch_loss_grad(
    const Params<float>&, const std::vector<const PolySegment*>&,
    const std::vector<ItemDraws>&, double, double, Params<float>*);
template LossReportT<double> batch_loss_grad(
    const Params<double>&, const std::vector<const PolySegment*>&,
    const std::vector<ItemDraws>&, double, double, Params<double>*);
template std::vector<LatentPosteriorT<float>> batch_encode(
    const Params<float>&, const std::vector<const PolySegment*>&);
template std::vector<LatentPosteriorT<double>> batch_encode(
    const Params<double>&, const std::vector<const PolySegment*>&);
template std::vector<PolySegment> batch_decode(const Params<float>&,
                                               const nn::Mat<float>&);
template std::vector<PolySegment> batch_decode(const Params<double>&,
                                               const nn::Mat<double>&);

}  // namespace pianotree
