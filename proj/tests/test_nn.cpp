#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "tas/checkpoint.hpp"
#include "tas/nn.hpp"

using namespace tas;

namespace {

MlpParams identity_layer(int n) {
  MlpParams p;
  Layer l;
  l.weight = Mat(n, n);
  for (int i = 0; i < n; ++i) l.weight(i, i) = 1.0;
  l.bias = Vec(n, 0.0);
  l.act = Activation::Identity;
  p.layers.push_back(l);
  return p;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("mlp_forward identity and affine cases") {
  const MlpParams id = identity_layer(3);
  const Vec x = {0.5, -1.25, 2.0};
  CHECK(mlp_forward(id, x) == x);

  MlpParams affine;
  Layer l;
  l.weight = Mat(1, 1);
  l.weight(0, 0) = 2.0;
  l.bias = {1.0};
  l.act = Activation::Identity;
  affine.layers.push_back(l);
  CHECK(mlp_forward(affine, {3.0}) == Vec{7.0});
}

TEST_CASE("mlp_forward relu dead region gives zero output") {
  MlpParams p;
  Layer l;
  l.weight = Mat(2, 2);
  l.weight(0, 0) = 1.0;
  l.weight(1, 1) = 1.0;
  l.bias = {-10.0, -10.0};
  l.act = Activation::ReLU;
  p.layers.push_back(l);
  CHECK(mlp_forward(p, {1.0, 2.0}) == Vec{0.0, 0.0});
}

TEST_CASE("mlp_forward rejects dimension mismatch") {
  const MlpParams id = identity_layer(3);
  CHECK_THROWS_AS(mlp_forward(id, {1.0, 2.0}), ContractError);
}

TEST_CASE("mlp_forward is bit-deterministic") {
  Rng rng(11);
  const MlpParams p = make_mlp(4, {16, 16}, 3, Activation::Tanh, rng);
  const Vec x = {0.1, -0.7, 0.3, 1.9};
  const Vec a = mlp_forward(p, x);
  const Vec b = mlp_forward(p, x);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(std::memcmp(&a[i], &b[i], sizeof(double)) == 0);
}

TEST_CASE("mlp_backward linear layer calculus") {
  // single identity-activation layer: dW = g x^T, db = g
  MlpParams p = identity_layer(2);
  p.layers[0].weight(0, 1) = 0.5;  // make it non-trivial
  MlpTape tape;
  const Vec x = {2.0, -3.0};
  mlp_forward(p, x, &tape);
  MlpGrads grads(p);
  const Vec g = {1.5, -0.25};
  const Vec dx = mlp_backward(p, tape, g, grads);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) CHECK(grads.dweight[0](r, c) == g[r] * x[c]);
  CHECK(grads.dbias[0] == g);
  // dx = W^T g
  CHECK(dx[0] == Catch::Approx(1.5));
  CHECK(dx[1] == Catch::Approx(0.5 * 1.5 - 0.25));
}

TEST_CASE("mlp_backward zero output grad gives zero gradients") {
  Rng rng(3);
  const MlpParams p = make_mlp(3, {8}, 2, Activation::ReLU, rng);
  MlpTape tape;
  mlp_forward(p, {0.2, 0.4, -0.6}, &tape);
  MlpGrads grads(p);
  mlp_backward(p, tape, {0.0, 0.0}, grads);
  for (const auto& m : grads.dweight)
    for (double v : m.data) CHECK(v == 0.0);
  for (const auto& b : grads.dbias)
    for (double v : b) CHECK(v == 0.0);
}

TEST_CASE("mlp_backward matches central finite differences") {
  // scalar loss = sum of outputs; probe several architectures
  Rng rng(17);
  const std::vector<std::tuple<std::vector<int>, Activation>> archs = {
      {{5, 16, 4}, Activation::Tanh},
      {{3, 8, 8, 2}, Activation::ReLU},
      {{4, 12, 1}, Activation::Identity},
  };
  for (const auto& [sizes, act] : archs) {
    std::vector<int> hidden(sizes.begin() + 1, sizes.end() - 1);
    MlpParams p = make_mlp(sizes.front(), hidden, sizes.back(), act, rng);
    Vec x(sizes.front());
    for (double& v : x) v = rng.uniform(-1.0, 1.0);

    MlpTape tape;
    MlpGrads grads(p);
    const Vec y0 = mlp_forward(p, x, &tape);
    mlp_backward(p, tape, Vec(y0.size(), 1.0), grads);

    auto loss = [&]() {
      const Vec y = mlp_forward(p, x);
      double s = 0.0;
      for (double v : y) s += v;
      return s;
    };
    Rng probe_rng(5);
    const double err = finite_diff_check(loss, mlp_tensors(p, "net"), grad_tensors(grads, "net"),
                                         60, probe_rng);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("adam zero gradients leave parameters unchanged") {
  Rng rng(5);
  MlpParams p = make_mlp(2, {4}, 1, Activation::Tanh, rng);
  const MlpParams before = p;
  MlpGrads grads(p);  // zeros
  Adam opt;
  opt.step(mlp_tensors(p, "n"), grad_tensors(grads, "n"));
  for (size_t li = 0; li < p.layers.size(); ++li) {
    CHECK(p.layers[li].weight.data == before.layers[li].weight.data);
    CHECK(p.layers[li].bias == before.layers[li].bias);
  }
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam first step matches the reference recurrence") {
  // reference double-precision evaluation of the bias-corrected update
  MlpParams p = identity_layer(2);
  MlpGrads grads(p);
  grads.dweight[0](0, 0) = 0.3;
  grads.dweight[0](1, 1) = -2.0;
  grads.dbias[0] = {0.1, 0.0};

  const AdamConfig cfg{1e-3, 0.9, 0.999, 1e-8};
  auto reference = [&](double theta, double g) {
    const double m = (1.0 - cfg.beta1) * g;
    const double v = (1.0 - cfg.beta2) * g * g;
    const double mhat = m / (1.0 - cfg.beta1);
    const double vhat = v / (1.0 - cfg.beta2);
    return theta - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  };
  const double w00 = reference(1.0, 0.3);
  const double w11 = reference(1.0, -2.0);
  const double b0 = reference(0.0, 0.1);

  Adam opt(cfg);
  opt.step(mlp_tensors(p, "n"), grad_tensors(grads, "n"));
  CHECK(p.layers[0].weight(0, 0) == Catch::Approx(w00).epsilon(1e-15));
  CHECK(p.layers[0].weight(1, 1) == Catch::Approx(w11).epsilon(1e-15));
  CHECK(p.layers[0].bias[0] == Catch::Approx(b0).epsilon(1e-15));
}

TEST_CASE("adam counts steps and rejects non-finite gradients") {
  MlpParams p = identity_layer(1);
  MlpGrads grads(p);
  Adam opt;
  opt.step(mlp_tensors(p, "n"), grad_tensors(grads, "n"));
  opt.step(mlp_tensors(p, "n"), grad_tensors(grads, "n"));
  CHECK(opt.step_count() == 2);

  grads.dweight[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH(opt.step(mlp_tensors(p, "n"), grad_tensors(grads, "n")),
                    Catch::Matchers::ContainsSubstring("n.w0"));
}

TEST_CASE("finite_diff_check on a quadratic loss") {
  Rng rng(19);
  MlpParams p = make_mlp(3, {}, 2, Activation::Identity, rng);
  const Vec x = {0.4, -0.2, 0.9};
  const Vec target = {1.0, -1.0};

  MlpTape tape;
  MlpGrads grads(p);
  const Vec y = mlp_forward(p, x, &tape);
  Vec dy(y.size());
  for (size_t i = 0; i < y.size(); ++i) dy[i] = 2.0 * (y[i] - target[i]);
  mlp_backward(p, tape, dy, grads);

  auto loss = [&]() {
    const Vec out = mlp_forward(p, x);
    double s = 0.0;
    for (size_t i = 0; i < out.size(); ++i) s += (out[i] - target[i]) * (out[i] - target[i]);
    return s;
  };
  Rng probe(7);
  SECTION("correct gradient") {
    const double err =
        finite_diff_check(loss, mlp_tensors(p, "n"), grad_tensors(grads, "n"), 40, probe);
    CHECK(err < 1e-6);
  }
  SECTION("corrupted gradient reports ~1/3 relative error") {
    MlpGrads bad = grads;
    for (auto& m : bad.dweight)
      for (double& v : m.data) v *= 2.0;
    for (auto& b : bad.dbias)
      for (double& v : b) v *= 2.0;
    const double err =
        finite_diff_check(loss, mlp_tensors(p, "n"), grad_tensors(bad, "n"), 40, probe);
    CHECK(err == Catch::Approx(1.0 / 3.0).margin(1e-3));
  }
}

TEST_CASE("finite_diff_check constant function and determinism guard") {
  MlpParams p = identity_layer(2);
  MlpGrads zeros(p);
  Rng probe(2);
  auto constant = []() { return 4.5; };
  CHECK(finite_diff_check(constant, mlp_tensors(p, "n"), grad_tensors(zeros, "n"), 10, probe) ==
        0.0);

  int calls = 0;
  auto flaky = [&]() { return static_cast<double>(++calls); };
  CHECK_THROWS_AS(
      finite_diff_check(flaky, mlp_tensors(p, "n"), grad_tensors(zeros, "n"), 10, probe),
      ContractError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(23);
  MlpParams p = make_mlp(4, {8}, 3, Activation::Tanh, rng);
  quantize_to_checkpoint_precision(p);

  const auto dir = std::filesystem::temp_directory_path() / "tas_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string base = (dir / "net").string();
  save_checkpoint(base, mlp_checkpoint_entries(p, "net"), {{"note", "round-trip"}});

  const LoadedCheckpoint ck = load_checkpoint(base);
  const MlpParams q = mlp_from_checkpoint(ck, "net");
  REQUIRE(q.layers.size() == p.layers.size());
  for (size_t i = 0; i < p.layers.size(); ++i) {
    CHECK(q.layers[i].weight.data == p.layers[i].weight.data);
    CHECK(q.layers[i].bias == p.layers[i].bias);
    CHECK(q.layers[i].act == p.layers[i].act);
  }
  CHECK(ck.manifest.at("note") == "round-trip");

  // saving the loaded params reproduces identical bytes
  const std::string base2 = (dir / "net2").string();
  save_checkpoint(base2, mlp_checkpoint_entries(q, "net"), {{"note", "round-trip"}});
  CHECK(read_bytes(base + ".weights.bin") == read_bytes(base2 + ".weights.bin"));
}

TEST_CASE("checkpoint error paths are distinct") {
  Rng rng(29);
  MlpParams p = make_mlp(3, {4}, 2, Activation::ReLU, rng);
  const auto dir = std::filesystem::temp_directory_path() / "tas_ckpt_err";
  std::filesystem::create_directories(dir);
  const std::string base = (dir / "net").string();
  save_checkpoint(base, mlp_checkpoint_entries(p, "net"));

  SECTION("truncated payload") {
    const std::string bytes = read_bytes(base + ".weights.bin");
    std::ofstream out(base + ".weights.bin", std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 8));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(base), TruncationError);
  }
  SECTION("payload longer than the manifest says") {
    std::ofstream out(base + ".weights.bin", std::ios::binary | std::ios::app);
    const char pad[8] = {0};
    out.write(pad, 8);
    out.close();
    CHECK_THROWS_AS(load_checkpoint(base), ShapeError);
  }
  SECTION("malformed manifest") {
    std::ofstream out(base + ".manifest.json", std::ios::binary | std::ios::trunc);
    out << "{not json";
    out.close();
    CHECK_THROWS_AS(load_checkpoint(base), ParseError);
  }
}
