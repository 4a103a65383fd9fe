#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dbr/core/gradcheck.hpp"
#include "dbr/core/random.hpp"
#include "dbr/errors.hpp"
#include "dbr/models/network.hpp"

using namespace dbr;
using namespace dbr::models;
using core::Tape;
using core::Tensor;
using core::Var;

namespace {

NetConfig cfg(ModelKind kind, std::size_t classes) {
  NetConfig c;
  c.kind = kind;
  c.num_classes = classes;
  return c;
}

Tensor<double> random_batch(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  core::Rng rng(seed);
  Tensor<double> x({n, 5, 4});
  core::fill_uniform(x, rng, -scale, scale);
  return x;
}

// Perturbs every parameter (biases included) so no term is trivially zero.
template <typename T>
void randomize(Network<T>& net, std::uint64_t seed, double scale = 0.3) {
  core::Rng rng(seed);
  for (auto& p : net.parameters()) {
    for (auto& v : p.value.values()) v += static_cast<T>(core::uniform(rng, -scale, scale));
  }
}

Tensor<double> row_block(const Tensor<double>& x, std::size_t b) {
  Tensor<double> out({1, x.dim(1), x.dim(2)});
  std::copy_n(x.data() + b * 20, 20, out.data());
  return out;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Plain single-sample LSTM step: gates i, f, g, o.
void ref_lstm_step(const std::vector<double>& x, std::vector<double>& h, std::vector<double>& c,
                   const Tensor<double>& wx, const Tensor<double>& wh, const Tensor<double>& b) {
  const std::size_t H = h.size();
  std::vector<double> pre(4 * H);
  for (std::size_t j = 0; j < 4 * H; ++j) {
    double acc = b[j];
    for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * wx.at(k, j);
    for (std::size_t k = 0; k < H; ++k) acc += h[k] * wh.at(k, j);
    pre[j] = acc;
  }
  for (std::size_t j = 0; j < H; ++j) {
    const double i = sigmoid(pre[j]), f = sigmoid(pre[H + j]), g = std::tanh(pre[2 * H + j]),
                 o = sigmoid(pre[3 * H + j]);
    c[j] = f * c[j] + i * g;
    h[j] = o * std::tanh(c[j]);
  }
}

std::vector<double> ref_bilstm(Network<double>& net, const Tensor<double>& x, std::size_t b) {
  const std::size_t H = 64;
  std::vector<std::vector<double>> seq(5);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t f = 0; f < 4; ++f) seq[t].push_back(x.at(b, t, f));
  for (std::size_t l = 0; l < 2; ++l) {
    std::vector<std::vector<double>> next(5);
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string base = "lstm.l" + std::to_string(l) + "." + dir;
      std::vector<double> h(H, 0.0), c(H, 0.0);
      for (std::size_t k = 0; k < 5; ++k) {
        const std::size_t t = std::string(dir) == "fwd" ? k : 4 - k;
        ref_lstm_step(seq[t], h, c, net.parameter(base + ".wx").value,
                      net.parameter(base + ".wh").value, net.parameter(base + ".b").value);
        next[t].insert(next[t].end(), h.begin(), h.end());
      }
    }
    seq = next;
  }
  std::vector<double> mean(2 * H, 0.0);
  for (const auto& s : seq)
    for (std::size_t j = 0; j < 2 * H; ++j) mean[j] += s[j] / 5.0;
  return mean;
}

std::vector<double> ref_mscnn(Network<double>& net, const Tensor<double>& x, std::size_t b) {
  std::vector<double> cat;
  for (std::size_t k : {2, 3, 4}) {
    const auto& w = net.parameter("mscnn.k" + std::to_string(k) + ".w").value;
    const auto& bias = net.parameter("mscnn.k" + std::to_string(k) + ".b").value;
    for (std::size_t o = 0; o < 32; ++o) {
      double best = -1e300;
      for (std::size_t s = 0; s + k <= 5; ++s) {
        double acc = bias[o];
        for (std::size_t ch = 0; ch < 4; ++ch)
          for (std::size_t j = 0; j < k; ++j) acc += w.at(o, ch, j) * x.at(b, s + j, ch);
        best = std::max(best, std::max(acc, 0.0));
      }
      cat.push_back(best);
    }
  }
  const auto& w1 = net.parameter("fc1.w").value;
  const auto& b1 = net.parameter("fc1.b").value;
  std::vector<double> out(32);
  for (std::size_t j = 0; j < 32; ++j) {
    double acc = b1[j];
    for (std::size_t i = 0; i < 96; ++i) acc += cat[i] * w1.at(i, j);
    out[j] = std::max(acc, 0.0);
  }
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parameter counts follow the configuration") {
  CHECK(expected_parameter_count(cfg(ModelKind::fusion, 13)) == 140589);
  CHECK(expected_parameter_count(cfg(ModelKind::fusion, 6)) == 138496 + 161 * 6);
  CHECK(expected_parameter_count(cfg(ModelKind::bilstm, 13)) == 134144 + 129 * 13);
  CHECK(expected_parameter_count(cfg(ModelKind::lstm, 6)) == 17664 + 33024 + 65 * 6);
  CHECK(expected_parameter_count(cfg(ModelKind::conv1d, 7)) == 288 + 2080 + 4160 + 8256 + 65 * 7);
  for (auto kind : {ModelKind::fusion, ModelKind::bilstm, ModelKind::lstm, ModelKind::conv1d}) {
    for (std::size_t C : {2, 6, 7, 13}) {
      Network<float> net(cfg(kind, C), 1);
      CHECK(net.parameter_count() == expected_parameter_count(cfg(kind, C)));
    }
  }
  NetConfig odd = cfg(ModelKind::fusion, 3);
  odd.lstm_layers = 1;
  odd.lstm_hidden = 8;
  odd.kernel_sizes = {1, 5};
  odd.channels_per_kernel = 3;
  odd.fc1_out = 4;
  CHECK(Network<double>(odd, 0).parameter_count() == expected_parameter_count(odd));
}

TEST_CASE("configuration errors") {
  NetConfig c = cfg(ModelKind::fusion, 13);
  c.kernel_sizes = {2, 6};
  CHECK_THROWS_AS(Network<float>(c, 0), ConfigError);
  CHECK_THROWS_AS(Network<float>(cfg(ModelKind::fusion, 1), 0), ConfigError);
  CHECK_THROWS_AS(parse_model_kind("transformer"), ConfigError);
  CHECK(NetConfig::from_json(c.to_json()) == c);

  Network<double> net(cfg(ModelKind::lstm, 3), 0);
  CHECK_THROWS_AS(net.logits(Tensor<double>({2, 4, 4})), DimensionError);
  CHECK_THROWS_AS(net.logits(Tensor<double>({2, 5, 3})), DimensionError);
  CHECK_THROWS_AS(net.logits(Tensor<double>({20})), DimensionError);
}

TEST_CASE("zero parameters give uniform logits and loss ln C") {
  for (auto kind : {ModelKind::fusion, ModelKind::bilstm, ModelKind::lstm, ModelKind::conv1d}) {
    for (std::size_t C : {6, 13}) {
      auto net = Network<double>::zeros(cfg(kind, C));
      Tape<double> t;
      const Var x = t.constant(random_batch(4, 3));
      const Var z = net.forward(t, x);
      for (double v : t.value(z).values()) CHECK(v == 0.0);
      const std::vector<int> labels{0, 1, 2, 5};
      const Var loss = core::softmax_cross_entropy<double>(t, z, labels);
      CHECK(t.value(loss)[0] == doctest::Approx(std::log(double(C))).epsilon(1e-14));
      CHECK(net.predict(random_batch(4, 3)) == std::vector<int>(4, 0));
    }
  }
}

TEST_CASE("branch features") {
  SUBCASE("zero weights give a zero Bi-LSTM feature") {
    auto net = Network<double>::zeros(cfg(ModelKind::fusion, 13));
    Tape<double> t;
    const Var f = net.bilstm_branch(t, t.constant(random_batch(3, 1, 5.0)));
    CHECK(t.value(f).shape() == core::Shape{3, 128});
    for (double v : t.value(f).values()) CHECK(v == 0.0);
  }
  SUBCASE("zero input with zero biases gives a zero MSCNN feature") {
    Network<double> net(cfg(ModelKind::fusion, 13), 5);
    Tape<double> t;
    const Var f = net.mscnn_branch(t, t.constant(Tensor<double>({2, 5, 4})));
    CHECK(t.value(f).shape() == core::Shape{2, 32});
    for (double v : t.value(f).values()) CHECK(v == 0.0);
    CHECK(net.parameter("fc1.w").value.shape() == core::Shape{96, 32});
  }
  SUBCASE("Bi-LSTM matches a per-sample sequential loop") {
    Network<double> net(cfg(ModelKind::fusion, 13), 11);
    randomize(net, 12);
    const auto x = random_batch(6, 13, 2.0);
    Tape<double> t;
    const Tensor<double> f = t.value(net.bilstm_branch(t, t.constant(x)));
    double worst = 0;
    for (std::size_t b = 0; b < 6; ++b) {
      const auto ref = ref_bilstm(net, x, b);
      for (std::size_t j = 0; j < 128; ++j) worst = std::max(worst, std::abs(ref[j] - f.at(b, j)));
    }
    CHECK(worst < 1e-12);
  }
  SUBCASE("MSCNN matches composed conv, pool and dense loops") {
    Network<double> net(cfg(ModelKind::fusion, 13), 21);
    randomize(net, 22);
    const auto x = random_batch(6, 23, 2.0);
    Tape<double> t;
    const Tensor<double> f = t.value(net.mscnn_branch(t, t.constant(x)));
    double worst = 0;
    for (std::size_t b = 0; b < 6; ++b) {
      const auto ref = ref_mscnn(net, x, b);
      for (std::size_t j = 0; j < 32; ++j) worst = std::max(worst, std::abs(ref[j] - f.at(b, j)));
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("fusion head combines both branches") {
  Network<double> net(cfg(ModelKind::fusion, 5), 31);
  randomize(net, 32);
  const auto x = random_batch(3, 33);
  Tape<double> t;
  const Var xv = t.constant(x);
  const Tensor<double> a = t.value(net.bilstm_branch(t, xv));
  const Tensor<double> m = t.value(net.mscnn_branch(t, xv));
  const Tensor<double> z = net.logits(x);
  const auto& w = net.parameter("fc2.w").value;
  const auto& b = net.parameter("fc2.b").value;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      double acc = b[c];
      for (std::size_t j = 0; j < 128; ++j) acc += a.at(r, j) * w.at(j, c);
      for (std::size_t j = 0; j < 32; ++j) acc += m.at(r, j) * w.at(128 + j, c);
      CHECK(std::abs(acc - z.at(r, c)) < 1e-12);
    }
}

TEST_CASE("batch independence and determinism") {
  for (auto kind : {ModelKind::fusion, ModelKind::bilstm, ModelKind::lstm, ModelKind::conv1d}) {
    Network<double> net(cfg(kind, 7), 41);
    randomize(net, 42);
    const auto x = random_batch(9, 43);
    const auto full = net.logits(x);
    for (std::size_t b = 0; b < 9; ++b) {
      const auto one = net.logits(row_block(x, b));
      for (std::size_t c = 0; c < 7; ++c) CHECK(std::abs(one[c] - full.at(b, c)) < 1e-6);
    }
    // Reversed batch order permutes the outputs the same way.
    Tensor<double> rev({9, 5, 4});
    for (std::size_t b = 0; b < 9; ++b) std::copy_n(x.data() + (8 - b) * 20, 20, rev.data() + b * 20);
    const auto rz = net.logits(rev);
    for (std::size_t b = 0; b < 9; ++b)
      for (std::size_t c = 0; c < 7; ++c) CHECK(std::abs(rz.at(b, c) - full.at(8 - b, c)) < 1e-12);
    // Duplicated sample.
    Tensor<double> dup({4, 5, 4});
    for (std::size_t b = 0; b < 4; ++b) std::copy_n(x.data(), 20, dup.data() + b * 20);
    const auto dz = net.logits(dup);
    for (std::size_t b = 1; b < 4; ++b)
      for (std::size_t c = 0; c < 7; ++c) CHECK(dz.at(b, c) == dz.at(0, c));
    CHECK(net.logits(x) == full);
    // Same seed, same network.
    Network<double> again(cfg(kind, 7), 41);
    randomize(again, 42);
    CHECK(again.logits(x) == full);
  }
}

TEST_CASE("predict uses argmax with ties to the lowest index") {
  CHECK(core::argmax_rows(Tensor<double>({1, 3}, {0.1, 0.9, 0.3})) == std::vector<int>{1});
  CHECK(core::argmax_rows(Tensor<double>({1, 3}, {1.0, 1.0, 0.0})) == std::vector<int>{0});
  core::Rng rng(51);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t rows = 1 + core::uniform_index(rng, 8), cols = 2 + core::uniform_index(rng, 12);
    Tensor<double> z({rows, cols});
    // Few distinct values so ties are common.
    for (auto& v : z.values()) v = double(core::uniform_index(rng, 4));
    const auto got = core::argmax_rows(z);
    Tensor<double> mono = z;
    for (auto& v : mono.values()) v = std::exp(3.0 * v) - 7.0;
    CHECK(core::argmax_rows(mono) == got);
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < cols; ++c)
        if (z.at(r, c) > z.at(r, best)) best = c;
      CHECK(got[r] == int(best));
    }
  }
}

TEST_CASE("finite-difference gradient check on 3 samples") {
  const std::vector<int> labels{0, 2, 1};
  for (auto kind : {ModelKind::fusion, ModelKind::bilstm, ModelKind::lstm, ModelKind::conv1d}) {
    Network<double> net(cfg(kind, 4), 61);
    randomize(net, 62, 0.1);
    const auto x = random_batch(3, 63);
    auto ptrs = net.parameter_ptrs();
    auto result = core::grad_check(
        [&](Tape<double>& t) {
          return core::softmax_cross_entropy<double>(t, net.forward(t, t.constant(x)), labels);
        },
        ptrs);
    INFO(to_string(kind), " max rel error ", result.max_rel_error);
    CHECK(result.max_rel_error < 1e-5);
    CHECK(result.checked > 500);
  }
}

TEST_CASE("float and double networks from one seed agree") {
  Network<double> d(cfg(ModelKind::fusion, 6), 71);
  Network<float> f(cfg(ModelKind::fusion, 6), 71);
  CHECK(f.cast<double>().logits(random_batch(1, 1)).shape() == core::Shape{1, 6});
  for (std::size_t i = 0; i < d.parameters().size(); ++i) {
    CHECK(d.parameters()[i].value.cast<float>() == f.parameters()[i].value);
  }
  const auto x = random_batch(16, 72);
  const auto zd = d.logits(x);
  const auto zf = f.logits(x.cast<float>());
  double worst = 0;
  for (std::size_t i = 0; i < zd.size(); ++i) worst = std::max(worst, std::abs(zd[i] - double(zf[i])));
  CHECK(worst < 1e-4);
  CHECK(max_abs_diff(d.cast<float>().cast<double>().logits(x), zd) < 1e-4);
}

TEST_CASE("make_batch layout and standardization") {
  std::vector<data::WindowSample> s(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 20; ++j) s[i].states[j] = double(100 * i + j);
  const std::size_t idx[] = {2, 0};
  auto b = make_batch<double>(s, idx);
  CHECK(b.shape() == core::Shape{2, 5, 4});
  CHECK(b.at(0, 1, 2) == 206.0);
  CHECK(b.at(1, 4, 3) == 19.0);
  data::FeatureStats st;
  st.mean = {1, 2, 3, 4};
  st.stddev = {2, 2, 2, 2};
  auto z = make_batch<double>(s, {}, st);
  CHECK(z.at(1, 0, 1) == (101.0 - 2.0) / 2.0);
}
