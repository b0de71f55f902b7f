#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "evpose/gradcheck.hpp"
#include "evpose/model.hpp"

using namespace evpose;
using nd::Tape;
using nd::Tensor;

namespace {

ModelConfig micro(Variant v) {
  ModelConfig c;
  c.input_size = 16;
  c.heatmap_stride = 2;
  c.keypoints = 2;
  c.feature_channels = 4;
  c.encoder_depth = 3;
  c.lstm_layers = 2;
  c.variant = v;
  c.attention_channels = 4;
  c.t_max = 8;
  return c;
}

Tensor<double> random_frame(const ModelConfig& c, Rng& rng) {
  auto f = nd::tensor<double>({1, 2, c.input_size, c.input_size});
  for (double& v : f->v) v = rng.uniform();
  return f;
}

void zero_all_params(Model<double>& m) {
  for (size_t i = 0; i < m.params().size(); ++i)
    std::fill(m.params()[i].value->v.begin(), m.params()[i].value->v.end(),
              0.0);
}

void randomize_params(Model<double>& m, uint64_t seed) {
  Rng rng(seed);
  for (size_t i = 0; i < m.params().size(); ++i)
    for (double& v : m.params()[i].value->v) v = 0.3 * rng.normal();
}

}  // namespace

TEST_CASE("config validation rejects unreachable strides") {
  ModelConfig c = micro(Variant::kRnn);
  c.encoder_depth = 4;  // downsample 32 but stride 2 needs 16
  CHECK_THROWS_AS(Model<double>(c, 1), std::invalid_argument);
  c = micro(Variant::kRnn);
  c.input_size = 15;
  CHECK_THROWS_AS(Model<double>(c, 1), std::invalid_argument);
  c = micro(Variant::kRnn);
  c.t_max = 0;
  CHECK_THROWS_AS(Model<double>(c, 1), std::invalid_argument);
}

TEST_CASE("encoder: spatial contract and zero propagation") {
  // default-shaped config at desk width: 64 input, stride 4
  ModelConfig c;
  c.input_size = 64;
  c.feature_channels = 8;
  c.keypoints = 3;
  c.attention_channels = 4;
  Model<double> m(c, 7);
  Tape<double> tape;
  Rng rng(3);
  auto f = random_frame(c, rng);
  auto feat = m.encoder_forward(tape, f);
  CHECK(feat->shape == std::vector<int>{1, 8, 16, 16});

  auto zero = nd::tensor<double>({1, 2, 64, 64});
  auto zf = m.encoder_forward(tape, zero);
  for (double v : zf->v) CHECK(v == 0.0);

  auto bad = nd::tensor<double>({1, 2, 32, 32});
  CHECK_THROWS_AS(m.encoder_forward(tape, bad), std::invalid_argument);
}

TEST_CASE("head: zero map, channel count, identity-selecting kernel") {
  auto c = micro(Variant::kDenseAtt);
  Model<double> m(c, 5);
  Tape<double> tape;
  auto zero = nd::tensor<double>({1, 4, 8, 8});
  auto h = m.head_forward(tape, zero);
  CHECK(h->shape == std::vector<int>{1, 2, 8, 8});
  for (double v : h->v) CHECK(v == 0.0);

  // identity-selecting 1x1 weights permute channels
  auto& w = m.params().at("head.w").value;  // {2, 4, 1, 1}
  std::fill(w->v.begin(), w->v.end(), 0.0);
  std::fill(m.params().at("head.b").value->v.begin(),
            m.params().at("head.b").value->v.end(), 0.0);
  w->v[0 * 4 + 3] = 1.0;  // out0 <- in3
  w->v[1 * 4 + 1] = 1.0;  // out1 <- in1
  Rng rng(9);
  auto x = nd::tensor<double>({1, 4, 8, 8});
  for (double& v : x->v) v = rng.normal();
  auto y = m.head_forward(tape, x);
  for (int i = 0; i < 64; ++i) {
    CHECK(y->v[i] == x->v[3 * 64 + i]);
    CHECK(y->v[64 + i] == x->v[1 * 64 + i]);
  }
}

TEST_CASE("convlstm: zero parameters force zero cell and hidden") {
  auto c = micro(Variant::kDenseNoAtt);
  Model<double> m(c, 11);
  zero_all_params(m);
  Tape<double> tape;
  Rng rng(13);
  auto x = nd::tensor<double>({1, 6, 8, 8});  // M + K input channels
  for (double& v : x->v) v = rng.normal();
  auto [state, top] = m.convlstm_step(tape, x, m.initial_state());
  for (int l = 0; l < 2; ++l) {
    for (double v : state.cell[l]->v) CHECK(v == 0.0);
    for (double v : state.hidden[l]->v) CHECK(v == 0.0);
  }
  for (double v : top->v) CHECK(v == 0.0);
}

TEST_CASE("convlstm: saturated forget/input gates carry the cell exactly") {
  auto c = micro(Variant::kDenseNoAtt);
  Model<double> m(c, 11);
  zero_all_params(m);
  auto& bf = m.params().at("lstm.l0.xf.b").value;
  auto& bi = m.params().at("lstm.l0.xi.b").value;
  std::fill(bf->v.begin(), bf->v.end(), 50.0);
  std::fill(bi->v.begin(), bi->v.end(), -50.0);
  auto state = m.initial_state();
  Rng rng(17);
  for (double& v : state.cell[0]->v) v = rng.normal();
  auto x = nd::tensor<double>({1, 6, 8, 8});
  for (double& v : x->v) v = rng.normal();
  Tape<double> tape;
  auto [next, top] = m.convlstm_step(tape, x, state);
  for (size_t i = 0; i < next.cell[0]->v.size(); ++i)
    CHECK(next.cell[0]->v[i] == state.cell[0]->v[i]);
}

TEST_CASE("convlstm: micro-instance gradient vs finite differences") {
  auto c = micro(Variant::kRnn);
  c.lstm_layers = 1;
  Model<double> m(c, 19);
  randomize_params(m, 21);
  Rng rng(23);
  auto x = nd::tensor<double>({1, 4, 8, 8}, true);
  for (double& v : x->v) v = rng.normal();
  auto& wxi = m.params().at("lstm.l0.xi.w").value;
  auto& whc = m.params().at("lstm.l0.hc.w").value;
  auto state = m.initial_state();
  for (double& v : state.cell[0]->v) v = 0.5 * rng.normal();
  for (double& v : state.hidden[0]->v) v = 0.5 * rng.normal();

  std::vector<Tensor<double>> inputs = {x, wxi, whc};
  auto f = [&](Tape<double>& tp) {
    auto [next, top] = m.convlstm_step(tp, x, state);
    return nd::sum(tp, nd::mul(tp, top, top));
  };
  CHECK(nd::grad_check<double>(f, inputs, 1e-5).max_rel_err < 1e-4);
}

TEST_CASE("attention: range, neutral initialization, offset validation") {
  auto c = micro(Variant::kDenseAtt);
  Model<double> m(c, 29);
  Tape<double> tape;
  Rng rng(31);
  auto feat = nd::tensor<double>({1, 4, 8, 8});
  for (double& v : feat->v) v = rng.normal();
  auto prior = nd::tensor<double>({1, 2, 8, 8});
  for (double& v : prior->v) v = rng.normal();

  // default init: zero final layer and offset table -> exactly 0.5
  auto w = m.attention_weights(tape, feat, prior, 3);
  for (double v : w->v) CHECK(v == 0.5);

  randomize_params(m, 33);
  auto w2 = m.attention_weights(tape, feat, prior, 1);
  CHECK(w2->shape == std::vector<int>{1, 2, 8, 8});
  for (double v : w2->v) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(m.attention_weights(tape, feat, prior, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(m.attention_weights(tape, feat, prior, c.t_max),
                  std::invalid_argument);

  Model<double> rnn(micro(Variant::kRnn), 1);
  Tape<double> t2;
  CHECK_THROWS_AS(rnn.attention_weights(t2, feat, prior, 1), std::logic_error);
}

TEST_CASE("attention: gradient flows to features, prior, and offset bias") {
  auto c = micro(Variant::kDenseAtt);
  Model<double> m(c, 37);
  randomize_params(m, 39);
  Rng rng(41);
  auto feat = nd::tensor<double>({1, 4, 8, 8}, true);
  for (double& v : feat->v) v = rng.normal();
  auto prior = nd::tensor<double>({1, 2, 8, 8}, true);
  for (double& v : prior->v) v = rng.normal();
  auto& table = m.params().at("att.offset_bias").value;

  std::vector<Tensor<double>> inputs = {feat, prior, table};
  auto f = [&](Tape<double>& tp) {
    auto w = m.attention_weights(tp, feat, prior, 2);
    return nd::sum(tp, nd::mul(tp, w, w));
  };
  CHECK(nd::grad_check<double>(f, inputs, 1e-5).max_rel_err < 1e-4);
  feat->zero_grad();
  prior->zero_grad();
  table->zero_grad();
  Tape<double> tape;
  auto w = m.attention_weights(tape, feat, prior, 2);
  nd::backward(tape, nd::sum(tape, nd::mul(tape, w, w)));
  double nf = 0, np = 0;
  for (double g : feat->g) nf += g * g;
  for (double g : prior->g) np += g * g;
  CHECK(nf > 0.0);
  CHECK(np > 0.0);
  CHECK(table->g[1] != 0.0);
  CHECK(table->g[0] == 0.0);  // only offset 2 was used
}

TEST_CASE("unroll: T=1 degenerate forms match manual composition") {
  Rng rng(43);
  {
    Model<double> m(micro(Variant::kRnn), 51);
    auto frame = random_frame(m.config(), rng);
    Tape<double> t1;
    auto out = m.unroll(t1, {frame});
    Tape<double> t2;
    auto feat = m.encoder_forward(t2, frame);
    auto [st, top] = m.convlstm_step(t2, feat, m.initial_state());
    auto manual = m.head_forward(t2, top);
    REQUIRE(out.size() == 1);
    CHECK(out[0]->v == manual->v);
  }
  for (Variant v :
       {Variant::kThin, Variant::kDenseNoAtt, Variant::kDenseAtt}) {
    Model<double> m(micro(v), 53);
    auto frame = random_frame(m.config(), rng);
    Tape<double> t1;
    auto out = m.unroll(t1, {frame});
    Tape<double> t2;
    auto feat = m.encoder_forward(t2, frame);
    auto boot = m.boot_forward(t2, feat);
    std::vector<Tensor<double>> parts = {feat, boot};
    auto x = nd::concat_channels<double>(t2, parts);
    auto [st, top] = m.convlstm_step(t2, x, m.initial_state());
    auto manual = m.head_forward(t2, top);
    CHECK(out[0]->v == manual->v);
  }
}

TEST_CASE("unroll: shapes, length checks, attention evaluation count") {
  auto c = micro(Variant::kDenseAtt);
  Model<double> m(c, 57);
  Rng rng(59);
  std::vector<Tensor<double>> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(random_frame(c, rng));
  Tape<double> tape;
  const auto before = m.attention_evaluations();
  auto out = m.unroll(tape, frames);
  CHECK(m.attention_evaluations() - before == 3);  // 0 + 1 + 2 pairs
  REQUIRE(out.size() == 3);
  for (const auto& b : out)
    CHECK(b->shape == std::vector<int>{1, 2, 8, 8});

  CHECK_THROWS_AS(m.unroll(tape, {}), std::invalid_argument);
  std::vector<Tensor<double>> too_long(9, frames[0]);
  CHECK_THROWS_AS(m.unroll(tape, too_long), std::invalid_argument);
}

TEST_CASE("unroll: attention forced to one reproduces the plain dense sum") {
  // same seed: shared parameters are drawn before the attention block, so
  // both variants hold bit-identical shared weights
  Model<double> att(micro(Variant::kDenseAtt), 61);
  Model<double> plain(micro(Variant::kDenseNoAtt), 61);
  for (const auto& name : plain.params().names())
    REQUIRE(att.params().at(name).value->v == plain.params().at(name).value->v);

  Rng rng(63);
  std::vector<Tensor<double>> frames;
  for (int t = 0; t < 4; ++t) frames.push_back(random_frame(att.config(), rng));
  Tape<double> t1, t2;
  UnrollOptions<double> forced;
  forced.force_attention_one = true;
  auto a = att.unroll(t1, frames, forced);
  auto b = plain.unroll(t2, frames);
  REQUIRE(a.size() == b.size());
  for (size_t t = 0; t < a.size(); ++t) CHECK(a[t]->v == b[t]->v);
}

TEST_CASE("unroll: parameter count independent of T except the offset table") {
  auto c2 = micro(Variant::kDenseAtt);
  c2.t_max = 2;
  auto c16 = micro(Variant::kDenseAtt);
  c16.t_max = 16;
  Model<double> m2(c2, 1), m16(c16, 1);
  CHECK(m16.params().total_param_count() - m2.params().total_param_count() ==
        (16 - 1) - (2 - 1));
  for (Variant v : {Variant::kRnn, Variant::kThin, Variant::kDenseNoAtt}) {
    auto a = micro(v);
    a.t_max = 2;
    auto b = micro(v);
    b.t_max = 16;
    CHECK(Model<double>(a, 1).params().total_param_count() ==
          Model<double>(b, 1).params().total_param_count());
  }
}

TEST_CASE("dependency probe separates thin from dense connectivity") {
  Rng rng(65);
  for (Variant v :
       {Variant::kThin, Variant::kDenseNoAtt, Variant::kDenseAtt}) {
    Model<double> m(micro(v), 67);
    randomize_params(m, 69);
    std::vector<Tensor<double>> frames;
    for (int t = 0; t < 3; ++t) frames.push_back(random_frame(m.config(), rng));
    std::vector<Tensor<double>> priors;
    for (int t = 0; t < 3; ++t) {
      auto p = nd::tensor<double>({1, 2, 8, 8}, t == 0);
      for (double& x : p->v) x = rng.normal();
      priors.push_back(p);
    }
    priors[0]->zero_grad();
    UnrollOptions<double> opt;
    opt.reset_state_each_step = true;
    opt.fixed_priors = &priors;
    Tape<double> tape;
    auto out = m.unroll(tape, frames, opt);
    nd::backward(tape, nd::sum(tape, out[2]));
    double norm = 0.0;
    for (double g : priors[0]->g) norm += g * g;
    if (v == Variant::kThin)
      CHECK(norm == 0.0);
    else
      CHECK(norm > 1e-20);
  }
}

TEST_CASE("export_attention: validity, range, and bit-identical recompute") {
  auto c = micro(Variant::kDenseAtt);
  Model<double> m(c, 71);
  randomize_params(m, 73);
  Rng rng(75);
  std::vector<Tensor<double>> frames = {random_frame(c, rng),
                                        random_frame(c, rng)};
  Tape<double> t1;
  auto w = m.export_attention(t1, frames, 1, 0);
  CHECK(w->shape == std::vector<int>{1, 2, 8, 8});
  for (double v : w->v) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  Tape<double> t2;
  auto w2 = m.export_attention(t2, frames, 1, 0);
  CHECK(w->v == w2->v);

  Tape<double> t3;
  CHECK_THROWS_AS(m.export_attention(t3, frames, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(m.export_attention(t3, frames, 1, 1), std::invalid_argument);
  Model<double> plain(micro(Variant::kDenseNoAtt), 71);
  CHECK_THROWS_AS(plain.export_attention(t3, frames, 1, 0), std::logic_error);
}

TEST_CASE("full micro-model gradient spot check (subsampled)") {
  auto c = micro(Variant::kDenseAtt);
  Model<double> m(c, 77);
  randomize_params(m, 79);
  Rng rng(81);
  std::vector<Tensor<double>> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(random_frame(c, rng));
  auto target = nd::tensor<double>({1, 2, 8, 8});
  for (double& v : target->v) v = rng.uniform();

  std::vector<Tensor<double>> inputs;
  for (size_t i = 0; i < m.params().size(); ++i)
    inputs.push_back(m.params()[i].value);
  auto f = [&](Tape<double>& tp) {
    auto out = m.unroll(tp, frames);
    std::vector<Tensor<double>> losses;
    for (const auto& b : out) losses.push_back(nd::sse(tp, b, target));
    return nd::sum_tensors<double>(tp, losses);
  };
  auto rep = nd::grad_check<double>(f, inputs, 1e-5, 6, 123);
  CHECK(rep.max_rel_err < 1e-4);
}
