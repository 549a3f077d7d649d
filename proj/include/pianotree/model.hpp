#pragma once

// Hierarchical recurrent VAE over PolySegment trees.
//
// Encoder: shared note embedding -> per-onset bidirectional GRU (simu-note
// summaries) -> bidirectional GRU over onsets (score summary) -> linear
// heads for the Gaussian posterior.
//
// Decoder: latent -> time-axis GRU emitting one state per onset -> pitch-axis
// GRU emitting notes until EOS -> 129-way pitch softmax; five duration digits
// decoded MSB-first by a small GRU chain whose hidden state is projected from
// [pitch hidden, pitch probabilities]. Decoded notes are re-embedded with the
// encoder's embedding and pitch-axis GRU to form the next time-axis input.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pianotree/nn.hpp"
#include "pianotree/types.hpp"

namespace pianotree {

// Pitch tokens: 0..127 MIDI, 128 = EOS (also a softmax class), 129 = SOS
// (input only). Embedding input = 130-way one-hot + 5 duration digits.
inline constexpr int kPitchEos = 128;
inline constexpr int kPitchSos = 129;
inline constexpr int kPitchClasses = 129;
inline constexpr int kEmbedInputs = 130 + kDurationBits;
inline constexpr int kBitInputs = 3;  // previous digit 0, 1, or SOS

struct ModelDims {
  int e_n = 128;     // note embedding
  int e_sn = 512;    // simu-note embedding = decoder pitch hidden
  int e_sc = 1024;   // score embedding = decoder time hidden
  int d_z = 512;     // latent
  int h_p_enc = 256; // encoder pitch hidden (half of e_sn, bidirectional)
  int h_t_enc = 512; // encoder time hidden (half of e_sc)
  int h_p_dec = 512;
  int h_t_dec = 1024;
  int h_d_dec = 64;  // duration chain hidden
  int max_simu_notes = 16;

  void check() const {
    auto positive = e_n > 0 && e_sn > 0 && e_sc > 0 && d_z > 0 && h_p_enc > 0 &&
                    h_t_enc > 0 && h_p_dec > 0 && h_t_dec > 0 && h_d_dec > 0 &&
                    max_simu_notes > 0;
    if (!positive) throw ConfigError("model dims must all be positive");
    if (e_sn != h_p_dec || e_sn != 2 * h_p_enc)
      throw ConfigError("require e_sn = h_p_dec = 2*h_p_enc");
    if (e_sc != h_t_dec || e_sc != 2 * h_t_enc)
      throw ConfigError("require e_sc = h_t_dec = 2*h_t_enc");
  }

  static ModelDims full_size() { return {}; }
  static ModelDims miniature() {
    return {4, 8, 8, 4, 4, 4, 8, 8, 8, 16};
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

void to_json(nlohmann::json& j, const ModelDims& d);
void from_json(const nlohmann::json& j, ModelDims& d);

template <class S>
struct Params {
  ModelDims dims;

  nn::Linear<S> emb;               // e_n x kEmbedInputs, shared both directions
  nn::Gru<S> enc_pitch_f, enc_pitch_b;
  nn::Gru<S> enc_time_f, enc_time_b;
  nn::Linear<S> fc_mu, fc_logsigma;

  nn::Linear<S> fc_z2dec;          // latent -> initial time hidden
  nn::Vec<S> sos_sn;               // learned start symbol for the time axis
  nn::Gru<S> dec_time;
  nn::Linear<S> fc_time2pitch;     // time hidden -> initial pitch hidden
  nn::Gru<S> dec_pitch;
  nn::Linear<S> fc_pitch;          // pitch hidden -> 129 logits
  nn::Linear<S> fc_dur_init;       // [pitch hidden, pitch probs] -> dur hidden
  nn::Gru<S> dec_dur;
  nn::Linear<S> fc_bit;            // dur hidden -> 2 logits

  void init(const ModelDims& d, std::uint64_t seed);
  void zero_like(const Params& src);

  template <class F>
  void for_each(F&& f) {
    emb.for_each("emb", f);
    enc_pitch_f.for_each("enc.pitch.f", f);
    enc_pitch_b.for_each("enc.pitch.b", f);
    enc_time_f.for_each("enc.time.f", f);
    enc_time_b.for_each("enc.time.b", f);
    fc_mu.for_each("enc.fc_mu", f);
    fc_logsigma.for_each("enc.fc_logsigma", f);
    fc_z2dec.for_each("dec.fc_z2dec", f);
    f(std::string("dec.sos_sn"), sos_sn);
    dec_time.for_each("dec.time", f);
    fc_time2pitch.for_each("dec.fc_time2pitch", f);
    dec_pitch.for_each("dec.pitch", f);
    fc_pitch.for_each("dec.fc_pitch", f);
    fc_dur_init.for_each("dec.fc_dur_init", f);
    dec_dur.for_each("dec.dur", f);
    fc_bit.for_each("dec.fc_bit", f);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<Params*>(this)->for_each(
        [&](const std::string& name, const auto& t) { f(name, t); });
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const auto& t) { n += t.size(); });
    return n;
  }

  template <class T>
  Params<T> cast() const {
    Params<T> out;
    out.init(dims, 0);  // allocates the right shapes
    std::vector<std::pair<const S*, Eigen::Index>> src;
    for_each([&](const std::string&, const auto& t) {
      src.emplace_back(t.data(), t.size());
    });
    std::size_t i = 0;
    out.for_each([&](const std::string&, auto& t) {
      auto [ptr, n] = src[i++];
      for (Eigen::Index k = 0; k < n; ++k) t.data()[k] = static_cast<T>(ptr[k]);
    });
    return out;
  }
};

extern template struct Params<float>;
extern template struct Params<double>;

/// Embedding of one token: column picks for the one-hot pitch part plus the
/// set duration digits. `code == nullptr` means all-zero digits (SOS/EOS).
template <class S>
nn::Vec<S> embed_token(const nn::Linear<S>& emb, int pitch_token,
                       const DurationCode* code) {
  nn::Vec<S> v = emb.b + emb.w.col(pitch_token);
  if (code)
    for (int r = 0; r < kDurationBits; ++r)
      if ((*code)[r]) v += emb.w.col(130 + r);
  return v;
}

template <class S>
void embed_token_backward(nn::Linear<S>& grad, int pitch_token,
                          const DurationCode* code, const nn::Vec<S>& d) {
  grad.b += d;
  grad.w.col(pitch_token) += d;
  if (code)
    for (int r = 0; r < kDurationBits; ++r)
      if ((*code)[r]) grad.w.col(130 + r) += d;
}

/// A (pitch, duration-digits) input symbol for the shared embedding.
struct EmbedToken {
  int pitch;
  bool has_code = false;
  DurationCode code{};
};

EmbedToken note_token(const Note& n);
inline EmbedToken sos_token() { return {kPitchSos}; }
inline EmbedToken eos_token() { return {kPitchEos}; }

/// Tokens summarizing one onset: its notes, or SOS/EOS when empty.
std::vector<EmbedToken> onset_tokens(const std::vector<Note>& notes);

template <class S>
nn::Vec<S> embed_token(const nn::Linear<S>& emb, const EmbedToken& tok) {
  return embed_token(emb, tok.pitch, tok.has_code ? &tok.code : nullptr);
}

template <class S>
void embed_token_backward(nn::Linear<S>& grad, const EmbedToken& tok,
                          const nn::Vec<S>& d) {
  embed_token_backward(grad, tok.pitch, tok.has_code ? &tok.code : nullptr, d);
}

template <class S>
struct LatentPosteriorT {
  nn::Vec<S> mu;
  nn::Vec<S> sigma;  // standard deviation, strictly positive
};
using LatentPosterior = LatentPosteriorT<float>;

/// All randomness one (encode, decode-with-teacher) pass consumes, pre-drawn
/// in a fixed order so independent implementations agree: latent noise first,
/// then time-axis coins for onsets 1..T-1, then pitch-axis coins (K_t per
/// onset, inputs to positions 1..K_t).
struct ItemDraws {
  std::vector<double> eps;
  std::vector<double> time_coins;
  std::vector<std::vector<double>> pitch_coins;
};

ItemDraws draw_item(nn::Rng& rng, const ModelDims& dims, const PolySegment* teacher);

template <class S>
LatentPosteriorT<S> encode(const Params<S>& p, const PolySegment& seg);

/// The encoder's bidirectional simu-note summary of one onset (e_sn values).
template <class S>
nn::Vec<S> embed_simu_note(const Params<S>& p, const std::vector<Note>& notes);

template <class S>
nn::Vec<S> sample_latent(const LatentPosteriorT<S>& post, const nn::Vec<S>& noise);

/// KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - 2 log sigma).
template <class S>
S kl_divergence(const LatentPosteriorT<S>& post);

template <class S>
struct DecodeResult {
  PolySegment seg;  // canonicalized greedy output, always valid
  // teacher-aligned logits, exposed for loss computation and tests:
  // pitch[t][k] over positions k = 0..K_t (last target is EOS),
  // bits[t][k][r] over real notes only
  std::vector<std::vector<nn::Vec<S>>> pitch_logits;
  std::vector<std::vector<std::array<nn::Vec<S>, kDurationBits>>> bit_logits;
  int max_simu_notes_used = 0;  // teacher onsets longer than this were capped
};

/// Greedy decode. With a teacher, positions follow the teacher's structure
/// (K_t notes + EOS per onset) and inputs are teacher symbols with
/// probability tf_rate per coin; without, the model feeds back its own
/// argmax output and stops at EOS or max_simu_notes.
template <class S>
DecodeResult<S> decode(const Params<S>& p, const nn::Vec<S>& z,
                       const PolySegment* teacher = nullptr,
                       double tf_rate = 0.0, const ItemDraws* draws = nullptr);

template <class S>
struct LossReportT {
  S total = 0, recon_pitch = 0, recon_duration = 0, kl = 0;
  S beta = 0;
};
using LossReport = LossReportT<float>;

/// Loss from exposed logits (teacher-aligned decode required).
template <class S>
LossReportT<S> loss_from_logits(const DecodeResult<S>& dec, const PolySegment& target,
                                const LatentPosteriorT<S>& post, double beta);

/// Fused encode + reparameterize + teacher-aligned decode + loss + backward
/// for one item; the serial reference implementation. Gradients are scaled
/// by `grad_scale` and accumulated into `grad` (skipped when null).
template <class S>
LossReportT<S> item_loss_grad(const Params<S>& p, const PolySegment& x,
                              const ItemDraws& draws, double tf_rate, double beta,
                              Params<S>* grad, S grad_scale = S(1));

extern template LatentPosteriorT<float> encode(const Params<float>&, const PolySegment&);
extern template LatentPosteriorT<double> encode(const Params<double>&, const PolySegment&);
extern template nn::Vec<float> embed_simu_note(const Params<float>&, const std::vector<Note>&);
extern template nn::Vec<double> embed_simu_note(const Params<double>&, const std::vector<Note>&);
extern template nn::Vec<float> sample_latent(const LatentPosteriorT<float>&, const nn::Vec<float>&);
extern template nn::Vec<double> sample_latent(const LatentPosteriorT<double>&, const nn::Vec<double>&);
extern template float kl_divergence(const LatentPosteriorT<float>&);
extern template double kl_divergence(const LatentPosteriorT<double>&);
extern template DecodeResult<float> decode(const Params<float>&, const nn::Vec<float>&, const PolySegment*, double, const ItemDraws*);
extern template DecodeResult<double> decode(const Params<double>&, const nn::Vec<double>&, const PolySegment*, double, const ItemDraws*);
extern template LossReportT<float> loss_from_logits(const DecodeResult<float>&, const PolySegment&, const LatentPosteriorT<float>&, double);
extern template LossReportT<double> loss_from_logits(const DecodeResult<double>&, const PolySegment&, const LatentPosteriorT<double>&, double);
extern template LossReportT<float> item_loss_grad(const Params<float>&, const PolySegment&, const ItemDraws&, double, double, Params<float>*, float);
extern template LossReportT<double> item_loss_grad(const Params<double>&, const PolySegment&, const ItemDraws&, double, double, Params<double>*, double);

}  // namespace pianotree
