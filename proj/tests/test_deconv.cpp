#include <doctest.h>

#include <algorithm>

#include "ldaprune/deconv.hpp"
#include "support.hpp"

using namespace ldaprune;
using testsupport::random_tensor;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

// Scatter form of the transposed convolution, written independently of the library.
std::vector<double> naive_transposed(const std::vector<double>& y, const Tensor& k, int oh, int ow,
                                     int stride, int pad, int h, int w) {
  const int O = k.dim(0), C = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  std::vector<double> x(static_cast<std::size_t>(C * h * w), 0.0);
  for (int o = 0; o < O; ++o)
    for (int a = 0; a < oh; ++a)
      for (int b = 0; b < ow; ++b) {
        const double g = y[static_cast<std::size_t>((o * oh + a) * ow + b)];
        if (g == 0.0) continue;
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
              const int iy = a * stride + i - pad, ix = b * stride + j - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              x[static_cast<std::size_t>((c * h + iy) * w + ix)] +=
                  g * k[static_cast<std::size_t>(((o * C + c) * kh + i) * kw + j)];
            }
      }
  return x;
}

// Slow path: re-derives every deconv map from the forward activations with its own
// argmax/unpool/transpose code and reduces to the dependency table.
std::vector<std::vector<double>> slow_dependency(const ModelDescriptor& m,
                                                 const std::vector<LabeledImage>& imgs,
                                                 const std::vector<std::size_t>& selected) {
  const auto convs = conv_layer_indices(m);
  const std::size_t last = convs.back();
  std::vector<std::vector<std::vector<long double>>> sums(
      selected.size(), std::vector<std::vector<long double>>(convs.size()));
  for (const auto& item : imgs) {
    const ForwardRecord rec = forward_pass(m, item.image);
    for (std::size_t s = 0; s < selected.size(); ++s) {
      const Tensor& act = rec.outputs[last];
      const std::size_t plane = act.size() / static_cast<std::size_t>(act.dim(0));
      std::size_t best = 0;
      for (std::size_t p = 1; p < plane; ++p)
        if (act[selected[s] * plane + p] > act[selected[s] * plane + best]) best = p;
      std::vector<double> sig(act.size(), 0.0);
      const double top = act[selected[s] * plane + best];
      if (top <= 0.0) continue;
      sig[selected[s] * plane + best] = top;
      std::vector<std::vector<double>> maps(last + 1);
      maps[last] = sig;
      for (std::size_t i = last + 1; i-- > 0;) {
        const Shape below = i == 0 ? rec.input.shape() : rec.outputs[i - 1].shape();
        const Layer& L = m.layers[i];
        if (L.spec.kind == LayerKind::Relu) {
          for (double& v : sig) v = std::max(v, 0.0);
        } else if (L.spec.kind == LayerKind::MaxPool) {
          const Tensor& in = rec.outputs[i - 1];
          const int H = below[1], W = below[2], win = L.spec.pool.window, st = L.spec.pool.stride;
          const int OH = (H - win) / st + 1, OW = (W - win) / st + 1;
          std::vector<double> up(in.size(), 0.0);
          for (int c = 0; c < below[0]; ++c)
            for (int a = 0; a < OH; ++a)
              for (int b = 0; b < OW; ++b) {
                int arg = -1;
                for (int u = 0; u < win; ++u)
                  for (int v = 0; v < win; ++v) {
                    const int idx = (c * H + a * st + u) * W + b * st + v;
                    if (arg < 0 || in[static_cast<std::size_t>(idx)] > in[static_cast<std::size_t>(arg)]) arg = idx;
                  }
                up[static_cast<std::size_t>(arg)] = sig[static_cast<std::size_t>((c * OH + a) * OW + b)];
              }
          sig = std::move(up);
        } else {
          const Shape out = rec.outputs[i].shape();
          sig = naive_transposed(sig, L.weight, out[1], out[2], L.spec.conv.stride,
                                 L.spec.conv.pad, below[1], below[2]);
        }
        if (i > 0) maps[i - 1] = sig;
      }
      for (std::size_t c = 0; c < convs.size(); ++c) {
        const auto& map = maps[convs[c]];
        const std::size_t filters = static_cast<std::size_t>(m.layers[convs[c]].spec.conv.out_channels);
        const std::size_t pl = map.size() / filters;
        std::vector<long double> e(filters, 0);
        for (std::size_t f = 0; f < filters; ++f)
          for (std::size_t p = 0; p < pl; ++p) e[f] += std::abs(map[f * pl + p]);
        const long double mx = *std::max_element(e.begin(), e.end());
        sums[s][c].resize(filters, 0);
        if (mx <= 0) continue;
        for (std::size_t f = 0; f < filters; ++f) sums[s][c][f] += e[f] / mx;
      }
    }
  }
  std::vector<std::vector<double>> out(convs.size());
  for (std::size_t c = 0; c < convs.size(); ++c) {
    out[c].assign(static_cast<std::size_t>(m.layers[convs[c]].spec.conv.out_channels), 0.0);
    for (std::size_t s = 0; s < selected.size(); ++s)
      for (std::size_t f = 0; f < sums[s][c].size(); ++f)
        out[c][f] = std::max(out[c][f], static_cast<double>(sums[s][c][f] / imgs.size()));
  }
  return out;
}

}  // namespace

TEST_CASE("unpool") {
  PoolSwitches sw;
  sw.input_shape = {1, 2, 2};
  sw.output_shape = {1, 1, 1};
  sw.argmax = {3};
  CHECK(unpool(Tensor({1, 1, 1}, {4.0f}), sw, {1, 2, 2}) == Tensor({1, 2, 2}, {0, 0, 0, 4}));
  sw.argmax = {4};
  CHECK_THROWS_AS(unpool(Tensor({1, 1, 1}, {4.0f}), sw, {1, 2, 2}), Error);

  const Tensor x = random_tensor({4, 6, 8}, 12, 0.05f, 1.0f);
  const PoolResult r = maxpool_forward(x, 2, 2);
  const Tensor up = unpool(r.output, r.switches, x.shape());
  CHECK(maxpool_forward(up, 2, 2).output == r.output);
  CHECK(std::count_if(up.data().begin(), up.data().end(), [](float v) { return v != 0.0f; }) ==
        4 * 3 * 4);
}

TEST_CASE("deconv_rectify") {
  CHECK(deconv_rectify(Tensor({3}, {-1, 0, 2})) == Tensor({3}, {0, 0, 2}));
  CHECK(deconv_rectify(Tensor({2, 2}, 0.0f)) == Tensor({2, 2}, 0.0f));
  const Tensor x = random_tensor({3, 5, 5}, 2);
  const Tensor y = deconv_rectify(x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == std::max(x[i], 0.0f));
}

TEST_CASE("transposed_conv") {
  const Tensor k = random_tensor({3, 2, 3, 3}, 5);
  SUBCASE("one-hot signal reproduces the kernel slice at the origin") {
    Tensor sig({3, 4, 4});
    sig[static_cast<std::size_t>(1 * 16)] = 1.0f;  // (o=1, 0, 0)
    const Tensor out = transposed_conv(sig, k, 1, 0, {2, 6, 6});
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
          const float expect = (y < 3 && x < 3) ? k[static_cast<std::size_t>(((1 * 2 + c) * 3 + y) * 3 + x)] : 0.0f;
          CHECK(out.at(c, y, x) == expect);
        }
  }
  SUBCASE("zero signal") {
    const Tensor out = transposed_conv(Tensor({3, 4, 4}), k, 1, 0, {2, 6, 6});
    CHECK(out == Tensor({2, 6, 6}));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(transposed_conv(Tensor({2, 4, 4}), k, 1, 0, {2, 6, 6}), Error);
    CHECK_THROWS_AS(transposed_conv(Tensor({3, 5, 4}), k, 1, 0, {2, 6, 6}), Error);
  }
  SUBCASE("adjoint identity over 100 random trials") {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };
      const int C = pick(1, 4), O = pick(1, 4), kh = pick(1, 3), kw = pick(1, 3);
      const int stride = pick(1, 2), pad = pick(0, std::min(kh, kw) - 1);
      const int H = pick(kh, 9), W = pick(kw, 9);
      const Tensor x = random_tensor({C, H, W}, rng());
      const Tensor kk = random_tensor({O, C, kh, kw}, rng());
      const std::vector<float> no_bias(static_cast<std::size_t>(O), 0.0f);
      const Tensor cx = conv2d_forward(x, kk, no_bias, stride, pad);
      const Tensor y = random_tensor(cx.shape(), rng());
      const Tensor ty = transposed_conv(y, kk, stride, pad, x.shape());
      const double lhs = dot(cx, y), rhs = dot(x, ty);
      worst = std::max(worst, std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-6}));
      const std::vector<double> yd(y.data().begin(), y.data().end());
      const auto naive = naive_transposed(yd, kk, cx.dim(1), cx.dim(2), stride, pad, H, W);
      for (std::size_t i = 0; i < naive.size(); ++i) REQUIRE(ty[i] == doctest::Approx(naive[i]).epsilon(1e-5));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("deconv_from_neuron") {
  SUBCASE("dead neuron gives all-zero maps") {
    ModelDescriptor m = testsupport::tiny_net(2);
    m.layers[3].bias[1] = -100.0f;
    const ForwardRecord rec = forward_pass(m, random_tensor({1, 8, 8}, 4, 0.0f, 1.0f));
    const DeconvMap d = deconv_from_neuron(m, rec, 1);
    CHECK(d.dead);
    for (const Tensor& t : d.maps) CHECK(std::all_of(t.data().begin(), t.data().end(), [](float v) { return v == 0.0f; }));
    CHECK(d.pixels == Tensor({1, 8, 8}));
  }
  SUBCASE("single conv collapses to one transposed conv") {
    const ModelDescriptor m = build_model({2, 5, 5}, {LayerSpec::make_conv(3, 2, 3, 1, 1)}, 6);
    const ForwardRecord rec = forward_pass(m, random_tensor({2, 5, 5}, 9));
    const Tensor& act = rec.outputs[0];
    const DeconvMap d = deconv_from_neuron(m, rec, 2);
    std::size_t arg = 50;
    for (std::size_t p = 50; p < 75; ++p)
      if (act[p] > act[arg]) arg = p;
    REQUIRE(act[arg] > 0.0f);
    Tensor start({3, 5, 5});
    start[arg] = act[arg];
    CHECK(d.maps[0] == start);
    CHECK(d.pixels == transposed_conv(start, m.layers[0].weight, 1, 1, {2, 5, 5}));
  }
  SUBCASE("tiny 2-block net matches manual stage composition") {
    const ModelDescriptor m = testsupport::tiny_net(12);
    const ForwardRecord rec = forward_pass(m, random_tensor({1, 8, 8}, 77, 0.0f, 1.0f));
    const Tensor& act = rec.outputs[3];
    std::size_t neuron = 0;
    float top = 0.0f;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < act.size(); ++i)
      if (act[i] > top) {
        top = act[i];
        arg = i;
        neuron = i / 16;
      }
    REQUIRE(top > 0.0f);
    const DeconvMap d = deconv_from_neuron(m, rec, neuron, 3);
    Tensor s({4, 4, 4});
    s[arg] = top;
    CHECK(d.maps[3] == s);
    s = transposed_conv(s, m.layers[3].weight, 1, 1, {3, 4, 4});
    CHECK(d.maps[2] == s);
    s = unpool(s, *rec.switches[2], {3, 8, 8});
    CHECK(d.maps[1] == s);
    s = deconv_rectify(s);
    CHECK(d.maps[0] == s);
    s = transposed_conv(s, m.layers[0].weight, 1, 1, {1, 8, 8});
    CHECK(d.pixels == s);
    for (std::size_t i = 0; i < d.maps.size(); ++i) CHECK(d.maps[i].shape() == rec.outputs[i].shape());
  }
  SUBCASE("errors") {
    const ModelDescriptor m = testsupport::tiny_net(12);
    const ForwardRecord rec = forward_pass(m, random_tensor({1, 8, 8}, 7));
    CHECK_THROWS_AS(deconv_from_neuron(m, rec, 4), Error);
    CHECK_THROWS_AS(deconv_from_neuron(m, rec, 0, 1), Error);
  }
}

TEST_CASE("dependency_scores") {
  SUBCASE("constructed connectivity") {
    ModelDescriptor m = build_model({1, 6, 6}, {LayerSpec::make_conv(5, 1, 3, 1, 1), LayerSpec::make_relu(),
                                                LayerSpec::make_conv(2, 5, 3, 1, 1), LayerSpec::make_relu()}, 3);
    for (float& v : m.layers[0].weight.data()) v = std::abs(v);  // every filter fires on positive images
    Tensor& w = m.layers[2].weight;
    w.fill(0.0f);
    for (int i = 0; i < 9; ++i) {
      w[static_cast<std::size_t>((1 * 5 + 3) * 9 + i)] = 0.5f;  // neuron 1 <- filter 3 only
      w[static_cast<std::size_t>((0 * 5 + 0) * 9 + i)] = 0.5f;
    }
    const auto imgs = testsupport::random_images({1, 6, 6}, 5, 1);
    std::vector<LabeledImage> positive = imgs;
    for (auto& x : positive)
      for (float& v : x.image.data()) v = std::abs(v) + 0.1f;
    const std::vector<std::size_t> sel = {1};
    const DependencyTable t = dependency_scores(m, positive, sel);
    REQUIRE(t.layers.size() == 2);
    CHECK(t.layers[0].scores == std::vector<double>{0, 0, 0, 1, 0});
    CHECK(t.layers[1].scores == std::vector<double>{0, 1});
    CHECK(t.samples == 5);
    CHECK(t.selected == sel);
    CHECK(t.find(2) == &t.layers[1]);
    CHECK(t.find(1) == nullptr);
  }
  SUBCASE("all selected neurons dead") {
    ModelDescriptor m = testsupport::tiny_net(5);
    for (float& b : m.layers[3].bias.data()) b = -1000.0f;
    const auto imgs = testsupport::random_images({1, 8, 8}, 3, 1);
    const std::vector<std::size_t> sel = {0, 2};
    const DependencyTable t = dependency_scores(m, imgs, sel);
    CHECK(t.all_dead);
    for (const auto& l : t.layers) {
      CHECK(l.dead);
      for (double s : l.scores) CHECK(s == 0.0);
    }
  }
  SUBCASE("toy net, 20 images, 4 neurons vs slow path") {
    const ModelDescriptor m = make_toy_net({}, 31);
    auto imgs = testsupport::random_images({1, 32, 32}, 20, 5);
    for (auto& x : imgs)
      for (float& v : x.image.data()) v = std::abs(v);
    const std::vector<std::size_t> sel = {0, 5, 17, 30};
    const DependencyTable t = dependency_scores(m, imgs, sel);
    const auto oracle = slow_dependency(m, imgs, sel);
    REQUIRE(t.layers.size() == oracle.size());
    for (std::size_t c = 0; c < oracle.size(); ++c) {
      double mx = 0.0;
      for (std::size_t f = 0; f < oracle[c].size(); ++f) {
        CHECK(t.layers[c].scores[f] == doctest::Approx(oracle[c][f]).epsilon(1e-5));
        CHECK(t.layers[c].scores[f] >= 0.0);
        CHECK(t.layers[c].scores[f] <= 1.0 + 1e-12);
        mx = std::max(mx, t.layers[c].scores[f]);
      }
      if (!t.layers[c].dead) CHECK(mx > 0.0);
    }
  }
  SUBCASE("cutting a filter's outgoing weights drives its score to 0") {
    ModelDescriptor m = testsupport::tiny_net(9);
    const auto imgs = testsupport::random_images({1, 8, 8}, 6, 2);
    const std::vector<std::size_t> sel = {0, 1, 2, 3};
    REQUIRE(dependency_scores(m, imgs, sel).layers[0].scores[1] > 0.0);
    for (int o = 0; o < 4; ++o)
      for (int i = 0; i < 9; ++i) m.layers[3].weight[static_cast<std::size_t>((o * 3 + 1) * 9 + i)] = 0.0f;
    CHECK(dependency_scores(m, imgs, sel).layers[0].scores[1] == 0.0);
  }
  SUBCASE("empty inputs") {
    const ModelDescriptor m = testsupport::tiny_net(9);
    const auto imgs = testsupport::random_images({1, 8, 8}, 2, 2);
    CHECK_THROWS_AS(dependency_scores(m, imgs, std::vector<std::size_t>{}), Error);
    CHECK_THROWS_AS(dependency_scores(m, std::vector<LabeledImage>{}, std::vector<std::size_t>{0}), Error);
  }
}
