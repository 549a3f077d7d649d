#include "pianotree/model.hpp"

#include <algorithm>

#include "pianotree/log.hpp"
#include "pianotree/segment.hpp"

namespace pianotree {

using nlohmann::json;

void to_json(json& j, const ModelDims& d) {
  j = json{{"e_n", d.e_n},         {"e_sn", d.e_sn},
           {"e_sc", d.e_sc},       {"d_z", d.d_z},
           {"h_p_enc", d.h_p_enc}, {"h_t_enc", d.h_t_enc},
           {"h_p_dec", d.h_p_dec}, {"h_t_dec", d.h_t_dec},
           {"h_d_dec", d.h_d_dec}, {"max_simu_notes", d.max_simu_notes}};
}

void from_json(const json& j, ModelDims& d) {
  ModelDims defaults;
  d.e_n = j.value("e_n", defaults.e_n);
  d.e_sn = j.value("e_sn", defaults.e_sn);
  d.e_sc = j.value("e_sc", defaults.e_sc);
  d.d_z = j.value("d_z", defaults.d_z);
  d.h_p_enc = j.value("h_p_enc", defaults.h_p_enc);
  d.h_t_enc = j.value("h_t_enc", defaults.h_t_enc);
  d.h_p_dec = j.value("h_p_dec", defaults.h_p_dec);
  d.h_t_dec = j.value("h_t_dec", defaults.h_t_dec);
  d.h_d_dec = j.value("h_d_dec", defaults.h_d_dec);
  d.max_simu_notes = j.value("max_simu_notes", defaults.max_simu_notes);
}

template <class S>
void Params<S>::init(const ModelDims& d, std::uint64_t seed) {
  d.check();
  dims = d;
  nn::Rng rng(nn::mix64(seed));
  emb.init(d.e_n, kEmbedInputs, rng);
  enc_pitch_f.init(d.h_p_enc, d.e_n, rng);
  enc_pitch_b.init(d.h_p_enc, d.e_n, rng);
  enc_time_f.init(d.h_t_enc, d.e_sn, rng);
  enc_time_b.init(d.h_t_enc, d.e_sn, rng);
  fc_mu.init(d.d_z, d.e_sc, rng);
  fc_logsigma.init(d.d_z, d.e_sc, rng);
  fc_z2dec.init(d.h_t_dec, d.d_z, rng);
  sos_sn.resize(d.e_sn);
  for (int i = 0; i < d.e_sn; ++i)
    sos_sn(i) = static_cast<S>((2.0 * rng.uniform() - 1.0) * 0.1);
  dec_time.init(d.h_t_dec, d.e_sn, rng);
  fc_time2pitch.init(d.h_p_dec, d.h_t_dec, rng);
  dec_pitch.init(d.h_p_dec, d.e_n, rng);
  fc_pitch.init(kPitchClasses, d.h_p_dec, rng);
  fc_dur_init.init(d.h_d_dec, d.h_p_dec + kPitchClasses, rng);
  dec_dur.init(d.h_d_dec, kBitInputs, rng);
  fc_bit.init(2, d.h_d_dec, rng);
}

template <class S>
void Params<S>::zero_like(const Params& src) {
  dims = src.dims;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  src.for_each([&](const std::string&, const auto& t) {
    shapes.emplace_back(t.rows(), t.cols());
  });
  std::size_t i = 0;
  for_each([&](const std::string&, auto& t) {
    auto [r, c] = shapes[i++];
    t.setZero(r, c);
  });
}

template struct Params<float>;
template struct Params<double>;

ItemDraws draw_item(nn::Rng& rng, const ModelDims& dims, const PolySegment* teacher) {
  ItemDraws d;
  d.eps.resize(dims.d_z);
  for (double& e : d.eps) e = rng.normal();
  if (!teacher) return d;
  const int T = teacher->num_steps;
  d.time_coins.resize(T > 0 ? T - 1 : 0);
  for (double& c : d.time_coins) c = rng.uniform();
  d.pitch_coins.resize(T);
  for (int t = 0; t < T; ++t) {
    int K = std::min<int>(static_cast<int>(teacher->onsets[t].size()),
                          dims.max_simu_notes);
    d.pitch_coins[t].resize(K);
    for (double& c : d.pitch_coins[t]) c = rng.uniform();
  }
  return d;
}

EmbedToken note_token(const Note& n) {
  return {n.pitch, true, encode_duration(n.duration)};
}

std::vector<EmbedToken> onset_tokens(const std::vector<Note>& notes) {
  if (notes.empty()) return {sos_token(), eos_token()};
  std::vector<EmbedToken> out;
  out.reserve(notes.size());
  for (const Note& n : notes) out.push_back(note_token(n));
  return out;
}

namespace {

template <class S> using Vec = nn::Vec<S>;
using Token = EmbedToken;

template <class S>
Vec<S> embed(const nn::Linear<S>& emb, const Token& tok) {
  return embed_token(emb, tok);
}

template <class S>
void embed_backward(nn::Linear<S>& grad, const Token& tok, const Vec<S>& d) {
  embed_token_backward(grad, tok, d);
}

/// The pitch-axis bidirectional summary shared by encoder and decoder:
/// embeds tokens and concatenates the two final GRU hidden states.
template <class S>
struct SummaryTape {
  std::vector<Token> tokens;
  std::vector<nn::GruCache<S>> f_cells, b_cells;  // b_cells[i] applied at pos i
};

template <class S>
Vec<S> summarize_pitch(const Params<S>& p, const std::vector<Token>& tokens,
                       SummaryTape<S>* tape) {
  const int H = p.dims.h_p_enc;
  const int m = static_cast<int>(tokens.size());
  std::vector<Vec<S>> embs(m);
  for (int i = 0; i < m; ++i) embs[i] = embed(p.emb, tokens[i]);
  if (tape) {
    tape->tokens = tokens;
    tape->f_cells.resize(m);
    tape->b_cells.resize(m);
  }
  Vec<S> hf = Vec<S>::Zero(H), hb = Vec<S>::Zero(H);
  for (int i = 0; i < m; ++i)
    hf = nn::gru_forward(p.enc_pitch_f, embs[i], hf, tape ? &tape->f_cells[i] : nullptr);
  for (int i = m - 1; i >= 0; --i)
    hb = nn::gru_forward(p.enc_pitch_b, embs[i], hb, tape ? &tape->b_cells[i] : nullptr);
  Vec<S> out(2 * H);
  out << hf, hb;
  return out;
}

template <class S>
void summarize_pitch_backward(const Params<S>& p, const SummaryTape<S>& tape,
                              const Vec<S>& dout, Params<S>& grad) {
  const int H = p.dims.h_p_enc;
  const int m = static_cast<int>(tape.tokens.size());
  std::vector<Vec<S>> demb(m, Vec<S>::Zero(p.dims.e_n));
  Vec<S> dh = dout.head(H);
  for (int i = m - 1; i >= 0; --i) {
    Vec<S> dh_prev = Vec<S>::Zero(H);
    demb[i] += nn::gru_backward(p.enc_pitch_f, tape.f_cells[i], dh, dh_prev,
                                grad.enc_pitch_f);
    dh = dh_prev;
  }
  dh = dout.tail(H);
  for (int i = 0; i < m; ++i) {  // reverse of application order m-1..0
    Vec<S> dh_prev = Vec<S>::Zero(H);
    demb[i] += nn::gru_backward(p.enc_pitch_b, tape.b_cells[i], dh, dh_prev,
                                grad.enc_pitch_b);
    dh = dh_prev;
  }
  for (int i = 0; i < m; ++i) embed_backward(grad.emb, tape.tokens[i], demb[i]);
}

// ------------------------------------------------------------- encoder

template <class S>
struct EncodeTape {
  std::vector<SummaryTape<S>> onsets;
  std::vector<nn::GruCache<S>> time_f, time_b;
  Vec<S> sc;
  LatentPosteriorT<S> post;
};

template <class S>
LatentPosteriorT<S> encode_impl(const Params<S>& p, const PolySegment& seg,
                                EncodeTape<S>* tape) {
  const ModelDims& d = p.dims;
  const int T = seg.num_steps;
  if (tape) {
    tape->onsets.resize(T);
    tape->time_f.resize(T);
    tape->time_b.resize(T);
  }
  std::vector<Vec<S>> sn(T);
  for (int t = 0; t < T; ++t)
    sn[t] = summarize_pitch(p, onset_tokens(seg.onsets[t]),
                            tape ? &tape->onsets[t] : nullptr);

  const int H = d.h_t_enc;
  Vec<S> hf = Vec<S>::Zero(H), hb = Vec<S>::Zero(H);
  for (int t = 0; t < T; ++t)
    hf = nn::gru_forward(p.enc_time_f, sn[t], hf, tape ? &tape->time_f[t] : nullptr);
  for (int t = T - 1; t >= 0; --t)
    hb = nn::gru_forward(p.enc_time_b, sn[t], hb, tape ? &tape->time_b[t] : nullptr);
  Vec<S> sc(2 * H);
  sc << hf, hb;

  LatentPosteriorT<S> post;
  post.mu = p.fc_mu.forward(sc);
  Vec<S> logsig = p.fc_logsigma.forward(sc);
  post.sigma = logsig.array().exp().matrix();
  if (tape) {
    tape->sc = sc;
    tape->post = post;
  }
  return post;
}

/// dmu/dlogsig are gradients w.r.t. the posterior mean and log standard
/// deviation; walks the whole encoder in reverse.
template <class S>
void encode_backward(const Params<S>& p, const EncodeTape<S>& tape,
                     const Vec<S>& dmu, const Vec<S>& dlogsig, Params<S>& grad) {
  const ModelDims& d = p.dims;
  const int T = static_cast<int>(tape.onsets.size());
  Vec<S> dsc = p.fc_mu.backward(tape.sc, dmu, grad.fc_mu);
  dsc += p.fc_logsigma.backward(tape.sc, dlogsig, grad.fc_logsigma);

  const int H = d.h_t_enc;
  std::vector<Vec<S>> dsn(T, Vec<S>::Zero(d.e_sn));
  Vec<S> dh = dsc.head(H);
  for (int t = T - 1; t >= 0; --t) {
    Vec<S> dh_prev = Vec<S>::Zero(H);
    dsn[t] += nn::gru_backward(p.enc_time_f, tape.time_f[t], dh, dh_prev,
                               grad.enc_time_f);
    dh = dh_prev;
  }
  dh = dsc.tail(H);
  for (int t = 0; t < T; ++t) {
    Vec<S> dh_prev = Vec<S>::Zero(H);
    dsn[t] += nn::gru_backward(p.enc_time_b, tape.time_b[t], dh, dh_prev,
                               grad.enc_time_b);
    dh = dh_prev;
  }
  for (int t = 0; t < T; ++t)
    summarize_pitch_backward(p, tape.onsets[t], dsn[t], grad);
}

// ------------------------------------------------------------- decoder

template <class S>
struct PosTape {
  Token in_token;               // input embedding fed to the pitch cell
  nn::GruCache<S> pitch_cell;
  Vec<S> pitch_h;               // cell output
  Vec<S> probs;                 // 129
  int target = -1;
  bool has_dur = false;
  Vec<S> dur_cat;               // [pitch_h; probs]
  std::array<nn::GruCache<S>, kDurationBits> dur_cells;
  std::array<Vec<S>, kDurationBits> dur_h;
  std::array<Vec<S>, kDurationBits> bit_probs;
  DurationCode bit_targets{};
};

template <class S>
struct OnsetTape {
  nn::GruCache<S> time_cell;
  Vec<S> time_h;                // cell output, input to fc_time2pitch
  std::vector<PosTape<S>> positions;
  SummaryTape<S> sum;           // summary consumed by the next onset
  bool has_sum = false;
};

template <class S>
struct DecodeTape {
  Vec<S> z;
  std::vector<OnsetTape<S>> onsets;
};

template <class S>
Vec<S> bit_input(int value /* 0,1, or 2 = SOS */) {
  Vec<S> v = Vec<S>::Zero(kBitInputs);
  v(value) = S(1);
  return v;
}

template <class S>
struct ForwardOut {
  DecodeResult<S> result;
  S recon_pitch = 0, recon_duration = 0;
};

/// One pass of the decoder. Teacher mode follows the teacher's structure
/// (positions 0..K_t per onset, CE against teacher tokens) with teacher
/// inputs chosen per pre-drawn coin; free mode runs greedily to EOS.
template <class S>
ForwardOut<S> decode_forward(const Params<S>& p, const Vec<S>& z,
                             const PolySegment* teacher, double tf_rate,
                             const ItemDraws* draws, DecodeTape<S>* tape) {
  const ModelDims& d = p.dims;
  const int T = teacher ? teacher->num_steps : kSegmentSteps;
  if (teacher && !draws)
    throw PipelineError("decode: teacher mode requires pre-drawn coins");

  if (tape && !teacher)
    throw PipelineError("decode: gradients require a teacher-aligned pass");

  ForwardOut<S> out;
  out.result.seg = PolySegment(T);
  out.result.max_simu_notes_used = d.max_simu_notes;
  if (teacher) {
    out.result.pitch_logits.resize(T);
    out.result.bit_logits.resize(T);
  }
  if (tape) {
    tape->z = z;
    tape->onsets.resize(T);
  }

  Vec<S> sc_h = p.fc_z2dec.forward(z);
  Vec<S> next_time_in = p.sos_sn;

  for (int t = 0; t < T; ++t) {
    OnsetTape<S>* ot = tape ? &tape->onsets[t] : nullptr;
    sc_h = nn::gru_forward(p.dec_time, next_time_in, sc_h,
                           ot ? &ot->time_cell : nullptr);
    if (ot) ot->time_h = sc_h;
    Vec<S> pitch_h = p.fc_time2pitch.forward(sc_h);

    std::vector<Note> teacher_notes;
    if (teacher) {
      teacher_notes = teacher->onsets[t];
      if (static_cast<int>(teacher_notes.size()) > d.max_simu_notes) {
        log_warn("decode: onset with " + std::to_string(teacher_notes.size()) +
                 " notes truncated to " + std::to_string(d.max_simu_notes));
        teacher_notes.resize(d.max_simu_notes);
      }
    }
    const int K = teacher ? static_cast<int>(teacher_notes.size()) : -1;

    std::vector<Note> model_notes;     // argmax notes, emission order
    bool model_eos = false;            // argmax emitted EOS among note positions
    Token next_in = sos_token();

    for (int k = 0;; ++k) {
      if (teacher ? k > K : k >= d.max_simu_notes) break;

      PosTape<S>* pt = nullptr;
      if (ot) {
        ot->positions.emplace_back();
        pt = &ot->positions.back();
        pt->in_token = next_in;
      }
      Vec<S> x = embed(p.emb, next_in);
      pitch_h = nn::gru_forward(p.dec_pitch, x, pitch_h,
                                pt ? &pt->pitch_cell : nullptr);
      Vec<S> v = p.fc_pitch.forward(pitch_h);
      Vec<S> probs = nn::softmax(v);
      int argmax_pitch = 0;
      probs.maxCoeff(&argmax_pitch);

      if (teacher) {
        int target = (k < K) ? teacher_notes[k].pitch : kPitchEos;
        out.recon_pitch += nn::cross_entropy(probs, target);
        out.result.pitch_logits[t].push_back(v);
        if (pt) {
          pt->pitch_h = pitch_h;
          pt->probs = probs;
          pt->target = target;
        }
        if (k == K) break;  // final position's target is EOS, no duration
      } else if (argmax_pitch == kPitchEos) {
        break;
      }

      // duration chain, MSB first
      Vec<S> cat(d.h_p_dec + kPitchClasses);
      cat << pitch_h, probs;
      Vec<S> dh = p.fc_dur_init.forward(cat);
      DurationCode teacher_code{};
      if (teacher) teacher_code = encode_duration(teacher_notes[k].duration);
      DurationCode argmax_code{};
      int prev_bit = 2;  // SOS
      std::array<Vec<S>, kDurationBits> bit_logit_store;
      for (int r = 0; r < kDurationBits; ++r) {
        dh = nn::gru_forward(p.dec_dur, bit_input<S>(prev_bit), dh,
                             pt ? &pt->dur_cells[r] : nullptr);
        Vec<S> y = p.fc_bit.forward(dh);
        Vec<S> bp = nn::softmax(y);
        argmax_code[r] = static_cast<std::uint8_t>(bp(1) > bp(0) ? 1 : 0);
        if (teacher) {
          out.recon_duration += nn::cross_entropy(bp, static_cast<int>(teacher_code[r]));
          bit_logit_store[r] = y;
          prev_bit = teacher_code[r];  // chain is teacher-forced under a teacher
        } else {
          prev_bit = argmax_code[r];
        }
        if (pt) {
          pt->dur_h[r] = dh;
          pt->bit_probs[r] = bp;
        }
      }
      if (pt) {
        pt->has_dur = true;
        pt->dur_cat = cat;
        pt->bit_targets = teacher_code;
      }
      if (teacher) out.result.bit_logits[t].push_back(bit_logit_store);

      // the model's own note at this position, used for feedback and summaries
      if (argmax_pitch == kPitchEos) model_eos = true;
      if (!model_eos)
        model_notes.push_back({argmax_pitch, decode_duration(argmax_code)});

      // choose the next position's input token
      Token model_tok = argmax_pitch == kPitchEos
                            ? eos_token()
                            : Token{argmax_pitch, true, argmax_code};
      if (teacher) {
        bool force = draws->pitch_coins[t][k] < tf_rate;
        next_in = force ? note_token(teacher_notes[k]) : model_tok;
      } else {
        next_in = model_tok;
      }
    }

    out.result.seg.onsets[t] = model_notes;

    if (t + 1 < T) {
      std::vector<Token> sum_tokens;
      if (teacher) {
        bool force = draws->time_coins[t] < tf_rate;
        if (force) {
          sum_tokens = onset_tokens(teacher_notes);
        } else {
          sum_tokens = onset_tokens(model_notes);
        }
      } else {
        sum_tokens = onset_tokens(model_notes);
      }
      next_time_in = summarize_pitch(p, sum_tokens, ot ? &ot->sum : nullptr);
      if (ot) ot->has_sum = true;
    }
  }

  out.result.seg = canonicalize(out.result.seg);
  return out;
}

/// Reverse pass over a teacher-mode forward tape. CE gradients are seeded
/// with `scale`; returns the gradient w.r.t. z.
template <class S>
Vec<S> decode_backward(const Params<S>& p, const DecodeTape<S>& tape,
                       Params<S>& grad, S scale) {
  const ModelDims& d = p.dims;
  const int T = static_cast<int>(tape.onsets.size());
  Vec<S> dsc_h = Vec<S>::Zero(d.h_t_dec);     // flows along the time chain
  Vec<S> dsum = Vec<S>::Zero(d.e_sn);         // grad of onset t's summary output

  for (int t = T - 1; t >= 0; --t) {
    const OnsetTape<S>& ot = tape.onsets[t];
    if (ot.has_sum) summarize_pitch_backward(p, ot.sum, dsum, grad);

    // positions in reverse
    const int P = static_cast<int>(ot.positions.size());
    Vec<S> dph = Vec<S>::Zero(d.h_p_dec);
    for (int k = P - 1; k >= 0; --k) {
      const PosTape<S>& pt = ot.positions[k];
      Vec<S> dprobs = Vec<S>::Zero(kPitchClasses);
      Vec<S> dph_local = Vec<S>::Zero(d.h_p_dec);

      if (pt.has_dur) {
        Vec<S> ddh = Vec<S>::Zero(d.h_d_dec);
        for (int r = kDurationBits - 1; r >= 0; --r) {
          Vec<S> dy = nn::ce_backward(pt.bit_probs[r],
                                      static_cast<int>(pt.bit_targets[r]), scale);
          ddh += p.fc_bit.backward(pt.dur_h[r], dy, grad.fc_bit);
          Vec<S> dh_prev = Vec<S>::Zero(d.h_d_dec);
          nn::gru_backward(p.dec_dur, pt.dur_cells[r], ddh, dh_prev, grad.dec_dur);
          ddh = dh_prev;
        }
        Vec<S> dcat = p.fc_dur_init.backward(pt.dur_cat, ddh, grad.fc_dur_init);
        dph_local += dcat.head(d.h_p_dec);
        dprobs += dcat.tail(kPitchClasses);
      }

      Vec<S> dv = nn::ce_backward(pt.probs, pt.target, scale);
      dv += nn::softmax_backward(pt.probs, dprobs);
      dph_local += p.fc_pitch.backward(pt.pitch_h, dv, grad.fc_pitch);

      Vec<S> dh_prev = Vec<S>::Zero(d.h_p_dec);
      Vec<S> dx = nn::gru_backward(p.dec_pitch, pt.pitch_cell,
                                   (dph + dph_local).eval(), dh_prev, grad.dec_pitch);
      embed_backward(grad.emb, pt.in_token, dx);
      dph = dh_prev;
    }

    // dph is now the grad of the initial pitch hidden = fc_time2pitch output
    Vec<S> dtime_h = p.fc_time2pitch.backward(ot.time_h, dph, grad.fc_time2pitch);
    dtime_h += dsc_h;
    dsc_h = Vec<S>::Zero(d.h_t_dec);
    Vec<S> dtime_in = nn::gru_backward(p.dec_time, ot.time_cell, dtime_h,
                                       dsc_h, grad.dec_time);
    if (t == 0) {
      grad.sos_sn += dtime_in;
    } else {
      dsum = dtime_in;  // consumed when processing onset t-1
    }
  }
  // dsc_h is now the grad of the initial time hidden = fc_z2dec output
  return p.fc_z2dec.backward(tape.z, dsc_h, grad.fc_z2dec);
}

}  // namespace

// -------------------------------------------------------------- public

template <class S>
LatentPosteriorT<S> encode(const Params<S>& p, const PolySegment& seg) {
  if (!is_valid(seg)) throw DataError("encode: invalid segment");
  return encode_impl<S>(p, seg, nullptr);
}

template <class S>
nn::Vec<S> embed_simu_note(const Params<S>& p, const std::vector<Note>& notes) {
  return summarize_pitch<S>(p, onset_tokens(notes), nullptr);
}

template <class S>
nn::Vec<S> sample_latent(const LatentPosteriorT<S>& post, const nn::Vec<S>& noise) {
  return post.mu + (post.sigma.array() * noise.array()).matrix();
}

template <class S>
S kl_divergence(const LatentPosteriorT<S>& post) {
  auto mu = post.mu.array();
  auto sg = post.sigma.array();
  return S(0.5) * (mu * mu + sg * sg - S(1) - S(2) * sg.log()).sum();
}

template <class S>
DecodeResult<S> decode(const Params<S>& p, const nn::Vec<S>& z,
                       const PolySegment* teacher, double tf_rate,
                       const ItemDraws* draws) {
  return decode_forward<S>(p, z, teacher, tf_rate, draws, nullptr).result;
}

template <class S>
LossReportT<S> loss_from_logits(const DecodeResult<S>& dec, const PolySegment& target,
                                const LatentPosteriorT<S>& post, double beta) {
  LossReportT<S> rep;
  rep.beta = static_cast<S>(beta);
  const int T = target.num_steps;
  if (static_cast<int>(dec.pitch_logits.size()) != T)
    throw PipelineError("loss: logits do not match the target's onset count");
  for (int t = 0; t < T; ++t) {
    std::vector<Note> notes = target.onsets[t];  // mirror the decoder's cap
    if (static_cast<int>(notes.size()) > dec.max_simu_notes_used)
      notes.resize(dec.max_simu_notes_used);
    const auto& pl = dec.pitch_logits[t];
    if (pl.size() != notes.size() + 1 ||
        dec.bit_logits[t].size() != notes.size())
      throw PipelineError("loss: logits do not match the target's note count");
    for (std::size_t k = 0; k < pl.size(); ++k) {
      int tgt = k < notes.size() ? notes[k].pitch : kPitchEos;
      rep.recon_pitch += nn::cross_entropy(nn::softmax(pl[k]), tgt);
    }
    for (std::size_t k = 0; k < notes.size(); ++k) {
      DurationCode code = encode_duration(notes[k].duration);
      for (int r = 0; r < kDurationBits; ++r)
        rep.recon_duration += nn::cross_entropy(
            nn::softmax(dec.bit_logits[t][k][r]), static_cast<int>(code[r]));
    }
  }
  rep.kl = kl_divergence(post);
  rep.total = rep.recon_pitch + rep.recon_duration + rep.beta * rep.kl;
  return rep;
}

template <class S>
LossReportT<S> item_loss_grad(const Params<S>& p, const PolySegment& x,
                              const ItemDraws& draws, double tf_rate, double beta,
                              Params<S>* grad, S grad_scale) {
  const ModelDims& d = p.dims;
  EncodeTape<S> enc_tape;
  EncodeTape<S>* et = grad ? &enc_tape : nullptr;
  LatentPosteriorT<S> post = encode_impl<S>(p, x, et);

  Vec<S> eps(d.d_z);
  for (int i = 0; i < d.d_z; ++i) eps(i) = static_cast<S>(draws.eps[i]);
  Vec<S> z = sample_latent(post, eps);

  DecodeTape<S> dec_tape;
  DecodeTape<S>* dt = grad ? &dec_tape : nullptr;
  ForwardOut<S> fwd = decode_forward<S>(p, z, &x, tf_rate, &draws, dt);

  LossReportT<S> rep;
  rep.beta = static_cast<S>(beta);
  rep.recon_pitch = fwd.recon_pitch;
  rep.recon_duration = fwd.recon_duration;
  rep.kl = kl_divergence(post);
  rep.total = rep.recon_pitch + rep.recon_duration + rep.beta * rep.kl;

  if (grad) {
    Vec<S> dz = decode_backward<S>(p, dec_tape, *grad, grad_scale);
    S bkl = grad_scale * rep.beta;
    Vec<S> dmu = dz + (bkl * post.mu.array()).matrix();
    Vec<S> dlogsig =
        (dz.array() * eps.array() * post.sigma.array() +
         bkl * (post.sigma.array() * post.sigma.array() - S(1)))
            .matrix();
    encode_backward<S>(p, enc_tape, dmu, dlogsig, *grad);
  }
  return rep;
}

template LatentPosteriorT<float> encode(const Params<float>&, const PolySegment&);
template LatentPosteriorT<double> encode(const Params<double>&, const PolySegment&);
template nn::Vec<float> embed_simu_note(const Params<float>&, const std::vector<Note>&);
template nn::Vec<double> embed_simu_note(const Params<double>&, const std::vector<Note>&);
template nn::Vec<float> sample_latent(const LatentPosteriorT<float>&, const nn::Vec<float>&);
template nn::Vec<double> sample_latent(const LatentPosteriorT<double>&, const nn::Vec<double>&);
template float kl_divergence(const LatentPosteriorT<float>&);
template double kl_divergence(const LatentPosteriorT<double>&);
template DecodeResult<float> decode(const Params<float>&, const nn::Vec<float>&, const PolySegment*, double, const ItemDraws*);
template DecodeResult<double> decode(const Params<double>&, const nn::Vec<double>&, const PolySegment*, double, const ItemDraws*);
template LossReportT<float> loss_from_logits(const DecodeResult<float>&, const PolySegment&, const LatentPosteriorT<float>&, double);
template LossReportT<double> loss_from_logits(const DecodeResult<double>&, const PolySegment&, const LatentPosteriorT<double>&, double);
template LossReportT<float> item_loss_grad(const Params<float>&, const PolySegment&, const ItemDraws&, double, double, Params<float>*, float);
template LossReportT<double> item_loss_grad(const Params<double>&, const PolySegment&, const ItemDraws&, double, double, Params<double>*, double);

}  // namespace pianotree
