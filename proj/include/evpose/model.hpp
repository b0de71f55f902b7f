#pragma once

#include <string>
#include <vector>

#include "evpose/ops.hpp"
#include "evpose/params.hpp"
#include "evpose/rng.hpp"

namespace evpose {

enum class Variant { kRnn, kThin, kDenseNoAtt, kDenseAtt };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kRnn: return "rnn";
    case Variant::kThin: return "thin";
    case Variant::kDenseNoAtt: return "dense_no_att";
    case Variant::kDenseAtt: return "dense_att";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "rnn") return Variant::kRnn;
  if (s == "thin") return Variant::kThin;
  if (s == "dense_no_att") return Variant::kDenseNoAtt;
  if (s == "dense_att") return Variant::kDenseAtt;
  throw std::invalid_argument("unknown variant: " + s);
}

struct ModelConfig {
  int input_size = 256;
  int heatmap_stride = 4;
  int keypoints = 13;           // K
  int feature_channels = 32;    // M; the reference setting is 256
  int encoder_depth = 4;        // stride-2 stages after the stride-2 stem
  int lstm_layers = 2;
  int lstm_kernel = 3;
  Variant variant = Variant::kDenseAtt;
  int attention_channels = 16;
  int t_max = 16;
  bool mean_normalize_prior = false;

  int heatmap_size() const { return input_size / heatmap_stride; }

  // The stem plus encoder_depth stages each halve resolution; the three
  // fixed deconv stages multiply it back by 8. The net stride must land
  // exactly on heatmap_stride.
  void validate() const {
    if (input_size <= 0 || heatmap_stride <= 0 || keypoints <= 0 ||
        feature_channels <= 0 || lstm_layers <= 0 || attention_channels <= 0)
      throw std::invalid_argument("ModelConfig: non-positive field");
    if (t_max < 1) throw std::invalid_argument("ModelConfig: t_max must be >= 1");
    if (input_size % heatmap_stride != 0)
      throw std::invalid_argument(
          "ModelConfig: input_size not divisible by heatmap_stride");
    if (lstm_kernel % 2 != 1)
      throw std::invalid_argument("ModelConfig: lstm_kernel must be odd");
    const int total_down = 1 << (encoder_depth + 1);
    if (total_down != heatmap_stride * 8)
      throw std::invalid_argument(
          "ModelConfig: encoder_depth " + std::to_string(encoder_depth) +
          " cannot reach stride " + std::to_string(heatmap_stride) +
          " through three deconv stages");
    if (input_size % total_down != 0)
      throw std::invalid_argument(
          "ModelConfig: input_size not divisible by the encoder downsample");
  }
};

template <typename T>
struct ConvLstmState {
  // one {cell, hidden} pair per layer, each {1, M, H', W'}
  std::vector<nd::Tensor<T>> cell;
  std::vector<nd::Tensor<T>> hidden;
};

template <typename T>
struct AttentionCapture {
  int t = 0;
  int tau = 0;
  nd::Tensor<T> weights;
};

template <typename T>
struct UnrollOptions {
  // Diagnostics used by structural tests: reset the LSTM state before each
  // step, substitute fixed tensors for the prior heatmap sources at t >= 1,
  // or force every attention weight to one.
  bool reset_state_each_step = false;
  bool force_attention_one = false;
  const std::vector<nd::Tensor<T>>* fixed_priors = nullptr;
  std::vector<AttentionCapture<T>>* capture_attention = nullptr;
};

// The recurrent pose network: encoder-decoder feature extractor, stacked
// ConvLSTM, 1x1 heatmap head, bootstrap head for the first frame, and the
// attention gate over temporally dense heatmap connections.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    build_params();
    init_params(init_seed);
  }

  const ModelConfig& config() const { return cfg_; }
  nd::ParamSet<T>& params() { return params_; }
  const nd::ParamSet<T>& params() const { return params_; }
  int64_t attention_evaluations() const { return att_evals_; }

  // F: 2 x H x W event frame (as {1,2,H,W}) -> {1,M,H',W'} feature map.
  nd::Tensor<T> encoder_forward(nd::Tape<T>& tape, const nd::Tensor<T>& x) {
    if (x->shape.size() != 4 || x->shape[1] != 2 ||
        x->shape[2] != cfg_.input_size || x->shape[3] != cfg_.input_size)
      throw std::invalid_argument("encoder_forward: expected {1,2," +
                                  std::to_string(cfg_.input_size) + "," +
                                  std::to_string(cfg_.input_size) + "}, got " +
                                  nd::shape_str(x));
    auto h = nd::relu(tape, conv(tape, x, "enc.stem", 2, 1));
    for (int i = 1; i <= cfg_.encoder_depth; ++i) {
      const std::string base = "enc.stage" + std::to_string(i);
      h = nd::relu(tape, conv(tape, h, base + ".down", 2, 1));
      auto r = nd::relu(tape, conv(tape, h, base + ".res1", 1, 1));
      r = conv(tape, r, base + ".res2", 1, 1);
      h = nd::relu(tape, nd::add(tape, h, r));
    }
    for (int j = 1; j <= 3; ++j)
      h = nd::relu(tape,
                   deconv(tape, h, "enc.deconv" + std::to_string(j), 2, 1));
    return h;
  }

  // g: 1x1 regression head, no output activation.
  nd::Tensor<T> head_forward(nd::Tape<T>& tape, const nd::Tensor<T>& x) {
    return conv(tape, x, "head", 1, 0);
  }

  // g0: bootstrap head applied to raw features at t = 0.
  nd::Tensor<T> boot_forward(nd::Tape<T>& tape, const nd::Tensor<T>& x) {
    if (cfg_.variant == Variant::kRnn)
      throw std::logic_error("boot_forward: rnn variant has no bootstrap");
    return conv(tape, x, "boot", 1, 0);
  }

  ConvLstmState<T> initial_state() const {
    ConvLstmState<T> s;
    const int hw = cfg_.heatmap_size();
    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      s.cell.push_back(nd::tensor<T>({1, cfg_.feature_channels, hw, hw}));
      s.hidden.push_back(nd::tensor<T>({1, cfg_.feature_channels, hw, hw}));
    }
    return s;
  }

  // One step of the stacked ConvLSTM; layer l consumes layer l-1's hidden
  // state. Returns the new state and the top hidden map.
  std::pair<ConvLstmState<T>, nd::Tensor<T>> convlstm_step(
      nd::Tape<T>& tape, const nd::Tensor<T>& x, const ConvLstmState<T>& state) {
    if (static_cast<int>(state.cell.size()) != cfg_.lstm_layers)
      throw std::invalid_argument("convlstm_step: state layer mismatch");
    ConvLstmState<T> next;
    nd::Tensor<T> input = x;
    const int pad = cfg_.lstm_kernel / 2;
    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      const std::string base = "lstm.l" + std::to_string(l);
      auto gate = [&](const char* g) {
        return nd::sigmoid(
            tape, nd::add(tape, conv(tape, input, base + ".x" + g, 1, pad),
                          conv_nobias(tape, state.hidden[l], base + ".h" + g, 1,
                                      pad)));
      };
      auto i = gate("i");
      auto f = gate("f");
      auto o = gate("o");
      auto c_cand = nd::tanh(
          tape, nd::add(tape, conv(tape, input, base + ".xc", 1, pad),
                        conv_nobias(tape, state.hidden[l], base + ".hc", 1,
                                    pad)));
      auto c = nd::add(tape, nd::mul(tape, f, state.cell[l]),
                       nd::mul(tape, i, c_cand));
      auto h = nd::mul(tape, o, nd::tanh(tape, c));
      next.cell.push_back(c);
      next.hidden.push_back(h);
      input = h;
    }
    return {next, input};
  }

  // W^t_tau: sigmoid gate over (reduced features, prior heatmap) with a
  // learned scalar bias per temporal offset; parameters shared across all
  // (t, tau) pairs.
  nd::Tensor<T> attention_weights(nd::Tape<T>& tape, const nd::Tensor<T>& feat,
                                  const nd::Tensor<T>& prior_heatmap,
                                  int offset) {
    if (cfg_.variant != Variant::kDenseAtt)
      throw std::logic_error("attention_weights: variant has no attention");
    if (offset < 1 || offset > cfg_.t_max - 1)
      throw std::invalid_argument("attention_weights: offset " +
                                  std::to_string(offset) + " out of range");
    auto reduced = conv(tape, feat, "att.reduce", 1, 0);
    return attention_from_reduced(tape, reduced, prior_heatmap, offset);
  }

  // Unrolls the variant over the clip; returns one {1,K,H',W'} heatmap
  // stack per frame. Prior heatmaps are the raw head outputs and keep
  // their gradients across time.
  std::vector<nd::Tensor<T>> unroll(nd::Tape<T>& tape,
                                    const std::vector<nd::Tensor<T>>& frames,
                                    const UnrollOptions<T>& opt = {}) {
    if (frames.empty()) throw std::invalid_argument("unroll: empty sequence");
    if (static_cast<int>(frames.size()) > cfg_.t_max)
      throw std::invalid_argument("unroll: sequence longer than t_max");
    const int T_len = static_cast<int>(frames.size());
    auto state = initial_state();
    std::vector<nd::Tensor<T>> heatmaps;
    heatmaps.reserve(T_len);

    for (int t = 0; t < T_len; ++t) {
      if (opt.reset_state_each_step) state = initial_state();
      auto feat = encoder_forward(tape, frames[t]);
      nd::Tensor<T> lstm_in;
      if (cfg_.variant == Variant::kRnn) {
        lstm_in = feat;
      } else {
        nd::Tensor<T> prior;
        if (t == 0) {
          prior = boot_forward(tape, feat);
        } else {
          const auto& sources =
              opt.fixed_priors ? *opt.fixed_priors : heatmaps;
          prior = gather_prior(tape, feat, sources, t, opt);
        }
        std::vector<nd::Tensor<T>> parts = {feat, prior};
        lstm_in = nd::concat_channels<T>(tape, parts);
      }
      auto [next_state, top] = convlstm_step(tape, lstm_in, state);
      state = std::move(next_state);
      heatmaps.push_back(head_forward(tape, top));
    }
    return heatmaps;
  }

  // Recomputes the unroll and returns the exact attention weights used for
  // the (t, tau) pair.
  nd::Tensor<T> export_attention(nd::Tape<T>& tape,
                                 const std::vector<nd::Tensor<T>>& frames,
                                 int t, int tau) {
    if (cfg_.variant != Variant::kDenseAtt)
      throw std::logic_error("export_attention: variant has no attention");
    if (tau >= t || tau < 0 || t >= static_cast<int>(frames.size()))
      throw std::invalid_argument("export_attention: need 0 <= tau < t");
    std::vector<AttentionCapture<T>> captures;
    UnrollOptions<T> opt;
    opt.capture_attention = &captures;
    unroll(tape, frames, opt);
    for (const auto& c : captures)
      if (c.t == t && c.tau == tau) return c.weights;
    throw std::logic_error("export_attention: pair not evaluated");
  }

 private:
  void build_params() {
    const int M = cfg_.feature_channels;
    const int K = cfg_.keypoints;
    add_conv("enc.stem", stage_channels(0), 2, 3);
    for (int i = 1; i <= cfg_.encoder_depth; ++i) {
      const std::string base = "enc.stage" + std::to_string(i);
      add_conv(base + ".down", stage_channels(i), stage_channels(i - 1), 3);
      add_conv(base + ".res1", stage_channels(i), stage_channels(i), 3);
      add_conv(base + ".res2", stage_channels(i), stage_channels(i), 3);
    }
    for (int j = 1; j <= 3; ++j)
      add_deconv("enc.deconv" + std::to_string(j), M, M, 4);
    add_conv("head", K, M, 1);

    const bool connected = cfg_.variant != Variant::kRnn;
    if (connected) add_conv("boot", K, M, 1);
    const int k = cfg_.lstm_kernel;
    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      const std::string base = "lstm.l" + std::to_string(l);
      const int in_ch = l == 0 ? (connected ? M + K : M) : M;
      for (const char* g : {"i", "f", "o", "c"}) {
        add_conv(base + ".x" + g, M, in_ch, k);
        add_conv_nobias(base + ".h" + g, M, M, k);
      }
    }
    if (cfg_.variant == Variant::kDenseAtt) {
      const int A = cfg_.attention_channels;
      add_conv("att.reduce", A, M, 1);
      add_conv("att.mix", A, A + K, 1);
      add_conv("att.out", K, A, 1);
      if (cfg_.t_max > 1) params_.add("att.offset_bias", {cfg_.t_max - 1});
    }
  }

  void init_params(uint64_t seed) {
    Rng rng(derive_seed(seed, "model-init"));
    for (size_t i = 0; i < params_.size(); ++i) {
      const std::string& name = params_.names()[i];
      // the attention output layer and offset table stay zero so every
      // gate starts at exactly 0.5
      if (name == "att.out.w" || name == "att.offset_bias") continue;
      auto& p = params_[i];
      if (name.ends_with(".w")) {
        const auto& s = p.value->shape;
        nd::init_uniform_fanin(p.value, s[1] * s[2] * s[3], rng);
      }
    }
    // standard recurrent practice: open the forget gates at the start
    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      auto& b = params_.at("lstm.l" + std::to_string(l) + ".xf.b").value;
      std::fill(b->v.begin(), b->v.end(), T{1});
    }
  }

  int stage_channels(int i) const {
    const int M = cfg_.feature_channels;
    const int floor_ch = std::max(4, M / 8);
    const int raw = M >> (cfg_.encoder_depth - i);
    return std::min(M, std::max(floor_ch, raw));
  }

  void add_conv(const std::string& base, int co, int ci, int k) {
    params_.add(base + ".w", {co, ci, k, k});
    params_.add(base + ".b", {co});
  }
  void add_conv_nobias(const std::string& base, int co, int ci, int k) {
    params_.add(base + ".w", {co, ci, k, k});
  }
  void add_deconv(const std::string& base, int ci, int co, int k) {
    params_.add(base + ".w", {ci, co, k, k});
    params_.add(base + ".b", {co});
  }

  nd::Tensor<T> conv(nd::Tape<T>& tape, const nd::Tensor<T>& x,
                     const std::string& base, int stride, int pad) {
    return nd::conv2d(tape, x, params_.at(base + ".w").value,
                      params_.at(base + ".b").value, stride, pad);
  }
  nd::Tensor<T> conv_nobias(nd::Tape<T>& tape, const nd::Tensor<T>& x,
                            const std::string& base, int stride, int pad) {
    return nd::conv2d(tape, x, params_.at(base + ".w").value, nd::Tensor<T>{},
                      stride, pad);
  }
  nd::Tensor<T> deconv(nd::Tape<T>& tape, const nd::Tensor<T>& x,
                       const std::string& base, int stride, int pad) {
    return nd::conv_transpose2d(tape, x, params_.at(base + ".w").value,
                                params_.at(base + ".b").value, stride, pad);
  }

  nd::Tensor<T> attention_from_reduced(nd::Tape<T>& tape,
                                       const nd::Tensor<T>& reduced,
                                       const nd::Tensor<T>& prior_heatmap,
                                       int offset) {
    std::vector<nd::Tensor<T>> parts = {reduced, prior_heatmap};
    auto z = nd::concat_channels<T>(tape, parts);
    auto m = nd::relu(tape, conv(tape, z, "att.mix", 1, 0));
    auto o = conv(tape, m, "att.out", 1, 0);
    o = nd::add_entry(tape, o, params_.at("att.offset_bias").value,
                      offset - 1);
    ++att_evals_;
    return nd::sigmoid(tape, o);
  }

  nd::Tensor<T> gather_prior(nd::Tape<T>& tape, const nd::Tensor<T>& feat,
                             const std::vector<nd::Tensor<T>>& sources, int t,
                             const UnrollOptions<T>& opt) {
    std::vector<nd::Tensor<T>> terms;
    if (cfg_.variant == Variant::kThin) {
      terms.push_back(sources[t - 1]);
    } else if (cfg_.variant == Variant::kDenseNoAtt ||
               (cfg_.variant == Variant::kDenseAtt && opt.force_attention_one)) {
      for (int tau = 0; tau < t; ++tau) terms.push_back(sources[tau]);
    } else {  // dense with attention
      auto reduced = conv(tape, feat, "att.reduce", 1, 0);
      for (int tau = 0; tau < t; ++tau) {
        auto w = attention_from_reduced(tape, reduced, sources[tau], t - tau);
        if (opt.capture_attention)
          opt.capture_attention->push_back({t, tau, w});
        terms.push_back(nd::mul(tape, w, sources[tau]));
      }
    }
    auto prior = nd::sum_tensors<T>(tape, terms);
    if (cfg_.mean_normalize_prior && terms.size() > 1)
      prior = nd::scale(tape, prior, T{1} / static_cast<T>(terms.size()));
    return prior;
  }

  ModelConfig cfg_;
  nd::ParamSet<T> params_;
  int64_t att_evals_ = 0;
};

}  // namespace evpose
