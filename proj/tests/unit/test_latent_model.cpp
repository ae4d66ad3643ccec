#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "fixtures.hpp"
#include "npc/binio.hpp"
#include "npc/latent_model.hpp"
#include "npc/random.hpp"

using namespace npc;
using namespace npc::lvm;

namespace {

Architecture small_arch(std::uint32_t d = 64, std::vector<std::uint32_t> m = {4}, std::uint64_t seed = 5) {
  return {d, std::move(m), {10}, seed};
}

Dataset constant_dataset(std::uint8_t value, std::size_t count, Shape shape) {
  Dataset d;
  for (std::size_t i = 0; i < count; ++i) d.items.emplace_back(shape, std::vector<std::uint8_t>(shape.size(), value));
  return d;
}

bool finite(const LogisticParams& p) { return p.mu.allFinite() && p.log_s.allFinite(); }
bool bounded(const LogisticParams& p) {
  return p.log_s.maxCoeff() <= kLogScaleBound && p.log_s.minCoeff() >= -kLogScaleBound;
}

}  // namespace

TEST_SUITE("latent-model") {
  TEST_CASE("initialization is repeatable and seeded") {
    const auto a = LatentModel::init(small_arch());
    const auto b = LatentModel::init(small_arch());
    CHECK(a == b);
    CHECK_FALSE(a == LatentModel::init(small_arch(64, {4}, 6)));
  }

  TEST_CASE("parameter count for d=64, m=[4], one hidden layer of 10") {
    // inference 64->10->8 : 640+10 + 80+8 ; generative 4->10->128 : 40+10 + 1280+128
    CHECK(LatentModel::parameter_count(small_arch()) == 738 + 1458);
    CHECK(LatentModel::init(small_arch()).params().size() == 2196);
  }

  TEST_CASE("invalid architectures") {
    for (const auto& arch : {Architecture{64, {4}, {}, 0}, Architecture{64, {}, {8}, 0}, Architecture{0, {4}, {8}, 0},
                             Architecture{64, {4, 0}, {8}, 0}}) {
      try {
        LatentModel::init(arch);
        FAIL("expected an error");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidArchitecture);
      }
    }
  }

  TEST_CASE("layers are pure, bounded and finite on extreme input") {
    const auto m = LatentModel::init(small_arch(64, {4, 3}));
    const Grid white(Shape{8, 8, 1}, std::vector<std::uint8_t>(64, 255));
    const auto x = normalize(white);
    const auto q1 = m.infer_layer(1, x);
    const auto q1b = m.infer_layer(1, x);
    CHECK(q1.mu == q1b.mu);
    CHECK(q1.log_s == q1b.log_s);
    CHECK(finite(q1));
    CHECK(bounded(q1));
    CHECK(q1.size() == 4);

    const auto q2 = m.infer_layer(2, q1.mu);
    CHECK(q2.size() == 3);
    const auto p1 = m.generate_layer(1, q2.mu);
    CHECK(p1.size() == 4);
    CHECK(finite(p1));
    CHECK(bounded(p1));
    const auto px = m.observe_params(q1.mu);
    CHECK(px.size() == 64);
    CHECK(finite(px));
    CHECK(bounded(px));
    CHECK(m.observe_params(q1.mu).mu == px.mu);

    // Huge latent inputs still give finite, clamped outputs.
    const auto far = m.observe_params(Eigen::VectorXd::Constant(4, 1e6));
    CHECK(finite(far));
    CHECK(bounded(far));
  }

  TEST_CASE("dimension mismatches") {
    const auto m = LatentModel::init(small_arch());
    try {
      m.infer_layer(1, Eigen::VectorXd::Zero(10));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DimMismatch);
    }
    CHECK_THROWS_AS(m.latent_mean(Grid(Shape{3, 3, 1})), Error);
    CHECK_THROWS_AS(m.observe_params(Eigen::VectorXd::Zero(5)), Error);
  }

  TEST_CASE("pixel masses form a distribution") {
    for (double mu : {-1.3, -0.2, 0.0, 0.7}) {
      for (double log_s : {-7.0, -3.0, 0.0, 2.0}) {
        double total = 0.0;
        for (int v = 0; v < 256; ++v) {
          const double lm = pixel_log_mass(mu, log_s, v);
          CHECK(lm <= 0.0);
          total += std::exp(lm);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("pixel masses are symmetric about zero") {
    CHECK(std::abs(pixel_log_mass(0.0, 0.0, 127) - pixel_log_mass(0.0, 0.0, 128)) < 1e-12);
    CHECK(std::abs(pixel_log_mass(0.0, -2.0, 0) - pixel_log_mass(0.0, -2.0, 255)) < 1e-12);
  }

  TEST_CASE("pixel mass concentrates as the scale shrinks") {
    const double mu = normalize_pixel(100);
    const double a = pixel_log_mass(mu, -3.0, 100);
    const double b = pixel_log_mass(mu, -5.0, 100);
    const double c = pixel_log_mass(mu, -7.0, 100);
    CHECK(a < b);
    CHECK(b < c);
    CHECK(c > -0.05);
  }

  TEST_CASE("logistic draws have the right moments") {
    SplitMix64 rng(44);
    const double mu = 0.3, log_s = -0.5;
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z = logistic_sample(mu, log_s, rng.open_unit());
      sum += z;
      sq += z * z;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    const double s = std::exp(log_s);
    CHECK(std::abs(mean - mu) < 0.02 * std::abs(mu) + 0.01);
    CHECK(var == doctest::Approx(s * s * M_PI * M_PI / 3.0).epsilon(0.02));
  }

  TEST_CASE("nelbo is finite and repeatable in its seed") {
    const auto m = LatentModel::init(small_arch());
    const auto d = synth_generate(2, 3, 8, 8, 1);
    const double a = m.nelbo(d.items[0], 3, 9);
    CHECK(std::isfinite(a));
    CHECK(a == m.nelbo(d.items[0], 3, 9));
    CHECK(a != m.nelbo(d.items[0], 3, 10));
  }

  TEST_CASE("nelbo Monte-Carlo spread brackets single draws") {
    const auto& toy = fixtures::toy1();
    const Grid& x = toy.data.items[5];
    std::vector<double> draws;
    for (std::uint64_t s = 0; s < 1000; ++s) draws.push_back(toy.model->nelbo(x, 1, 1000 + s));
    const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / draws.size();
    double ss = 0.0;
    for (double v : draws) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (draws.size() - 1));
    CHECK(std::abs(toy.model->nelbo(x, 1, 7) - mean) <= 5 * sd);
    CHECK(std::abs(toy.model->nelbo(x, 1000, 7) - mean) <= 5 * sd / std::sqrt(1000.0));
  }

  TEST_CASE("nelbo bounds the quadrature log-likelihood for a one-dimensional latent") {
    // With m_1 = 1, log p(x) and the ELBO are 1-D integrals over z.
    const auto data = synth_generate(2, 30, 4, 4, 3);
    TrainConfig cfg;
    cfg.epochs = 5;
    const auto m = train(LatentModel::init({16, {1}, {8}, 2}), data, cfg).model;
    const Grid& x = data.items[0];
    const auto xn = normalize(x);
    const auto q = m.infer_layer(1, xn);
    auto log_joint = [&](double z) {
      const auto px = m.observe_params(Eigen::VectorXd::Constant(1, z));
      double lp = logistic_log_pdf(z, 0.0, 0.0);
      for (std::size_t i = 0; i < x.size(); ++i) lp += pixel_log_mass(px.mu(i), px.log_s(i), x[i]);
      return lp;
    };
    // Substitute z = logit(u) so both integrals live on (0, 1).
    const int n = 200000;
    double elbo = 0.0, max_lj = -1e300;
    std::vector<double> lj(n), w(n);
    for (int i = 0; i < n; ++i) {
      const double u = (i + 0.5) / n;
      const double z = std::log(u) - std::log1p(-u);
      const double jac = 1.0 / (u * (1.0 - u));
      lj[i] = log_joint(z) + std::log(jac / n);
      max_lj = std::max(max_lj, lj[i]);
      const double lq = logistic_log_pdf(z, q.mu(0), q.log_s(0));
      w[i] = std::exp(lq) * jac / n * (log_joint(z) - lq);
      elbo += w[i];
    }
    double acc = 0.0;
    for (double v : lj) acc += std::exp(v - max_lj);
    const double log_px = max_lj + std::log(acc);

    const double mc = m.nelbo(x, 20000, 4);
    CHECK(-elbo >= -log_px - 1e-6);
    CHECK(mc == doctest::Approx(-elbo).epsilon(5e-3));
  }

  TEST_CASE("training on constant images learns them") {
    const auto zeros = constant_dataset(0, 64, Shape{4, 4, 1});
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.batch_size = 16;
    const auto m = train(LatentModel::init({16, {2}, {8}, 1}), zeros, cfg).model;
    const Grid full(Shape{4, 4, 1}, std::vector<std::uint8_t>(16, 255));
    CHECK(m.nelbo(zeros.items[0], 10, 3) < m.nelbo(full, 10, 3));
  }

  TEST_CASE("training contract") {
    const auto data = synth_generate(3, 40, 8, 8, 2);
    const auto init = LatentModel::init(small_arch(64, {6}, 2));
    TrainConfig none;
    none.epochs = 0;
    const auto r0 = train(init, data, none);
    CHECK(r0.model == init);
    CHECK(r0.loss_curve.empty());
    CHECK(r0.steps == 0);

    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 4;
    const auto a = train(init, data, cfg);
    const auto b = train(init, data, cfg);
    REQUIRE(a.loss_curve.size() == 20);
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(a.model == b.model);
    CHECK(a.steps == 20 * ((data.size() + 31) / 32));
    CHECK(a.loss_curve.back() < a.loss_curve.front());
    CHECK(a.loss_curve.back() < 8.0);

    // Window-5 moving average falls in at least 90% of steps.
    std::vector<double> smooth;
    for (std::size_t i = 0; i + 5 <= a.loss_curve.size(); ++i)
      smooth.push_back(std::accumulate(a.loss_curve.begin() + i, a.loss_curve.begin() + i + 5, 0.0) / 5);
    std::size_t down = 0;
    for (std::size_t i = 1; i < smooth.size(); ++i) down += smooth[i] < smooth[i - 1];
    CHECK(double(down) >= 0.9 * double(smooth.size() - 1));
  }

  TEST_CASE("training rejects empty or mismatched data") {
    const auto init = LatentModel::init(small_arch());
    CHECK_THROWS_AS(train(init, Dataset{}, TrainConfig{}), Error);
    CHECK_THROWS_AS(train(init, synth_generate(2, 5, 4, 4, 1), TrainConfig{}), Error);
  }

  TEST_CASE("gradient check on a fresh model") {
    const auto m = LatentModel::init(small_arch(64, {4, 3}, 9));
    const auto d = synth_generate(2, 2, 8, 8, 1);
    const auto r = grad_check(m, d.items[0], 1e-5, 1000, 3);
    CHECK(r.checked == 1000);
    CHECK(r.max_rel_err <= 1e-4);
    CHECK_FALSE(r.warning.has_value());
    CHECK(grad_check(m, d.items[0], 1e-12, 5, 3).warning == std::optional<std::string>("IllConditionedEpsilon"));
  }

  TEST_CASE("relative error") {
    CHECK(relative_error(0.0, 0.0) == 0.0);
    CHECK(relative_error(2.5, 2.5) == 0.0);
    CHECK(relative_error(1.0, 1.1) == doctest::Approx(0.1 / 1.1));
    CHECK(relative_error(1e-12, 0.0) == doctest::Approx(1e-5));
  }

  TEST_CASE("latent means separate the synthetic classes") {
    const auto& toy = fixtures::toy1();
    const auto mean0 = toy.model->latent_mean(toy.data.items[0]);
    CHECK(mean0.size() == 16);
    CHECK(mean0 == toy.model->latent_mean(toy.data.items[0]));
    std::vector<Eigen::VectorXd> centroid(4, Eigen::VectorXd::Zero(16));
    for (std::size_t i = 0; i < toy.data.size(); ++i)
      centroid[(*toy.data.labels)[i]] += toy.model->latent_mean(toy.data.items[i]) / 100.0;
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) CHECK((centroid[a] - centroid[b]).norm() > 0.0);
  }

  TEST_CASE("model file round trip and integrity") {
    const auto m = LatentModel::init(small_arch(64, {4, 2}));
    const auto bytes = m.serialize();
    CHECK(bytes[0] == 'N');
    CHECK(bytes[3] == 'M');
    const auto back = LatentModel::deserialize(bytes);
    CHECK(back == m);
    CHECK(back.hash() == m.hash());

    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;
    try {
      LatentModel::deserialize(flipped);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MalformedFile);
    }

    const auto path = std::filesystem::temp_directory_path() / "npc_model_roundtrip.npcm";
    m.save(path);
    CHECK(LatentModel::load(path) == m);
    std::filesystem::remove(path);

    auto other = m;
    other.params()[0] += 1e-9;
    CHECK(other.hash() != m.hash());
  }
}
