#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "core/cka.hpp"
#include "core/rng.hpp"

using namespace miscal;
using nn::Tensor;

namespace {

Tensor random_matrix(int n, int p, Rng& rng) {
  Tensor t({n, p});
  for (float& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

Tensor multiply_orthogonal(const Tensor& x, std::uint64_t seed) {
  const int n = x.dim(0), p = x.dim(1);
  Rng rng(seed);
  Eigen::MatrixXd g(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) g(i, j) = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Eigen::MatrixXd xm(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) xm(i, j) = x.data[static_cast<std::size_t>(i) * p + j];
  const Eigen::MatrixXd y = xm * q;
  Tensor out({n, p});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) out.data[static_cast<std::size_t>(i) * p + j] = static_cast<float>(y(i, j));
  return out;
}

}  // namespace

TEST_CASE("identical representations give CKA exactly 1") {
  Rng rng(1);
  const Tensor x = random_matrix(50, 32, rng);
  CHECK(linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("CKA is invariant to orthogonal transforms and isotropic scaling") {
  Rng rng(2);
  const Tensor x = random_matrix(48, 24, rng);
  const Tensor rotated = multiply_orthogonal(x, 99);
  CHECK(std::abs(linear_cka(x, rotated) - 1.0) < 1e-6);

  Tensor scaled = x;
  for (float& v : scaled.data) v *= -3.7f;
  CHECK(std::abs(linear_cka(x, scaled) - 1.0) < 1e-6);

  const Tensor y = random_matrix(48, 40, rng);
  Tensor y_scaled = y;
  for (float& v : y_scaled.data) v *= 0.02f;
  CHECK(std::abs(linear_cka(x, y) - linear_cka(x, y_scaled)) < 1e-6);
}

TEST_CASE("CKA is symmetric") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Tensor x = random_matrix(30, 17, rng);
    const Tensor y = random_matrix(30, 23, rng);
    CHECK(std::abs(linear_cka(x, y) - linear_cka(y, x)) < 1e-9);
  }
}

TEST_CASE("independent random representations stay below 0.2") {
  // Monte-Carlo oracle: 100 seeds at 100 samples x 64 features
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(mix_seed(0xCCA0, seed));
    const Tensor x = random_matrix(100, 64, rng);
    const Tensor y = random_matrix(100, 64, rng);
    const double v = linear_cka(x, y);
    worst = std::max(worst, v);
    CHECK(v >= 0.0);
    CHECK(v < 0.2);
  }
  CHECK(worst < 0.2);
}

TEST_CASE("results stay in [0,1] for assorted finite inputs") {
  Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    Tensor x = random_matrix(12, 5 + static_cast<int>(rng.uniform_int(60)), rng);
    Tensor y = random_matrix(12, 5 + static_cast<int>(rng.uniform_int(60)), rng);
    for (float& v : x.data) v = static_cast<float>(v * rng.uniform(0.1, 100.0));
    const double v = linear_cka(x, y);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-9);
  }
}

TEST_CASE("degenerate inputs return 0 instead of NaN") {
  Tensor zero({10, 8});
  Rng rng(5);
  const Tensor x = random_matrix(10, 8, rng);
  CHECK(linear_cka(zero, x) == 0.0);
  CHECK(linear_cka(x, zero) == 0.0);

  Tensor constant({10, 8});
  constant.fill(3.25f);  // centered away to zero
  CHECK(linear_cka(constant, x) == 0.0);
}

TEST_CASE("CKA input validation") {
  Rng rng(6);
  const Tensor x = random_matrix(10, 4, rng);
  const Tensor y = random_matrix(12, 4, rng);
  CHECK_THROWS_AS(linear_cka(x, y), std::invalid_argument);
  Tensor one({1, 4});
  CHECK_THROWS_AS(linear_cka(one, one), std::invalid_argument);
}

TEST_CASE("capture records stem plus every basic block") {
  DetectorModel model = DetectorModel::create(EncoderVariant::resnet18_small, 128, 64, 4.0, 8);
  Rng rng(9);
  Tensor batch({6, 3, 64, 128});
  for (float& v : batch.data) v = static_cast<float>(rng.uniform());

  ActivationTrace trace = capture(*model.image_encoder, batch, {}, 4);
  REQUIRE(trace.layers.size() == 5);
  CHECK(trace.layers[0] == "stem");
  CHECK(trace.layers[4] == "s2b2");
  for (const Tensor& f : trace.features) {
    CHECK(f.dim(0) == 6);
    CHECK(f.dim(1) > 0);
  }

  // capture twice -> identical traces (eval mode is pure)
  ActivationTrace again = capture(*model.image_encoder, batch, {}, 3);
  for (std::size_t i = 0; i < trace.features.size(); ++i)
    CHECK(trace.features[i].data == again.features[i].data);

  // selection subset and unknown names
  ActivationTrace sub = capture(*model.image_encoder, batch, {"s1b1", "s2b2"}, 4);
  CHECK(sub.layers == std::vector<std::string>{"s1b1", "s2b2"});
  CHECK_THROWS_AS(capture(*model.image_encoder, batch, {"nope"}, 4), std::invalid_argument);

  DetectorModel all = DetectorModel::create(EncoderVariant::resnet18_all, 128, 64, 4.0, 8);
  Tensor batch1({2, 3, 64, 128});
  for (float& v : batch1.data) v = static_cast<float>(rng.uniform());
  ActivationTrace trace_all = capture(*all.image_encoder, batch1, {}, 2);
  CHECK(trace_all.layers.size() == 9);
}

TEST_CASE("identical encoders fed the same input give a unit diagonal") {
  DetectorModel model = DetectorModel::create(EncoderVariant::resnet18_small, 128, 64, 4.0, 12);
  Rng rng(10);
  Tensor batch({8, 1, 64, 128});
  for (float& v : batch.data) v = static_cast<float>(rng.uniform());

  ActivationTrace a = capture(*model.lidar_encoder, batch, {}, 4);
  ActivationTrace b = capture(*model.lidar_encoder, batch, {}, 4);
  const CKAMatrix grid = cka_grid(a, b);
  REQUIRE(grid.img_layers.size() == 5);
  for (std::size_t i = 0; i < grid.img_layers.size(); ++i) {
    CHECK(grid.at(i, i) == doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t j = 0; j < grid.lidar_layers.size(); ++j) {
      CHECK(grid.at(i, j) >= 0.0);
      CHECK(grid.at(i, j) <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("cka_grid rejects traces from different batch sizes") {
  DetectorModel model = DetectorModel::create(EncoderVariant::resnet18_small, 128, 64, 4.0, 13);
  Rng rng(11);
  Tensor b6({6, 1, 64, 128}), b4({4, 1, 64, 128});
  for (float& v : b6.data) v = static_cast<float>(rng.uniform());
  for (float& v : b4.data) v = static_cast<float>(rng.uniform());
  ActivationTrace a = capture(*model.lidar_encoder, b6, {}, 4);
  ActivationTrace b = capture(*model.lidar_encoder, b4, {}, 4);
  CHECK_THROWS_AS(cka_grid(a, b), std::invalid_argument);
}

TEST_CASE("CKA grid exports CSV and a heatmap") {
  namespace fs = std::filesystem;
  CKAMatrix grid;
  grid.img_layers = {"stem", "s1b1"};
  grid.lidar_layers = {"stem", "s1b1", "s1b2"};
  grid.values = {1.0, 0.5, 0.25, 0.1, 0.9, 0.0};
  const fs::path csv = fs::temp_directory_path() / "miscal_cka_test.csv";
  const fs::path png = fs::temp_directory_path() / "miscal_cka_test.png";
  write_cka_csv(csv.string(), grid);
  render_cka_heatmap(png.string(), grid, "test grid");
  CHECK(fs::exists(csv));
  CHECK(fs::file_size(png) > 500);
  std::ifstream f(csv);
  std::string header;
  std::getline(f, header);
  CHECK(header == "image_layer,lidar_stem,lidar_s1b1,lidar_s1b2");
  fs::remove(csv);
  fs::remove(png);
}
