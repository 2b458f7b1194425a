#include <Eigen/Eigenvalues>
#include <cmath>
#include <json.hpp>
#include <set>

#include "doctest.h"
#include "support/metric_oracles.hpp"
#include "scalar/data/dataset.hpp"
#include "scalar/data/extract.hpp"
#include "scalar/metrics/metrics.hpp"

using namespace scalar;
using namespace scalar::metrics;

using namespace scalar::testing;

TEST_CASE("f1 edge") {
  Image a(8, 8, 1), b(8, 8, 1);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a.at(i, j) = 255;
  CHECK(f1_edge(a, a) == 1.0);
  b.at(7, 7) = 255;
  CHECK(f1_edge(a, b) == 0.0);
  Image plus = a;
  plus.at(5, 5) = 255;
  CHECK(f1_edge(plus, a) == doctest::Approx(18.0 / 19.0).epsilon(1e-15));
  const Image empty(8, 8, 1);
  CHECK(f1_edge(empty, empty) == 1.0);
  CHECK(f1_edge(empty, a) == 0.0);
  CHECK(f1_edge(a, empty) == 0.0);
  Image bad = a;
  bad.at(1, 1) = 128;
  CHECK_THROWS_AS(f1_edge(bad, a), std::invalid_argument);
  CHECK_THROWS_AS(f1_edge(a, Image(8, 9, 1)), ShapeError);

  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const int h = 1 + static_cast<int>(rng() % 16), w = 1 + static_cast<int>(rng() % 16);
    const auto p = random_binary(rng, h, w, 0.3), r = random_binary(rng, h, w, 0.3);
    CHECK(std::abs(f1_edge(p, r) - f1_oracle(p, r)) < 1e-12);
  }
}

TEST_CASE("rmse") {
  Rng rng(2);
  auto a = random_image(rng, 12, 12, 3);
  CHECK(rmse(a, a) == 0.0);
  for (auto& p : a.pixels) p = static_cast<std::uint8_t>(p % 200);
  Image b = a;
  for (auto& p : b.pixels) p = static_cast<std::uint8_t>(p + 37);
  CHECK(rmse(a, b) == 37.0);
  for (int t = 0; t < 20; ++t) {
    const int h = 1 + static_cast<int>(rng() % 16), w = 1 + static_cast<int>(rng() % 16), c = t % 2 ? 3 : 1;
    const auto p = random_image(rng, h, w, c), r = random_image(rng, h, w, c);
    double s = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) s += std::pow(double(p.at(y, x, ch)) - double(r.at(y, x, ch)), 2);
    CHECK(std::abs(rmse(p, r) - std::sqrt(s / (h * w * c))) < 1e-9);
  }
  CHECK_THROWS_AS(rmse(a, Image(12, 12, 1)), ShapeError);
}

TEST_CASE("ssim") {
  Rng rng(3);
  const auto a = random_image(rng, 16, 16, 1), b = random_image(rng, 16, 16, 1);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));
  for (int t = 0; t < 10; ++t) {
    const int h = 11 + static_cast<int>(rng() % 6), w = 11 + static_cast<int>(rng() % 6);
    const auto p = random_image(rng, h, w, 1), r = random_image(rng, h, w, 1);
    CHECK(std::abs(ssim(p, r) - ssim_oracle(p, r)) < 1e-6);
  }
  // Mid-contrast gradient with texture, against its photographic negative.
  Image g(32, 32, 1), neg(32, 32, 1);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      g.at(y, x) = static_cast<std::uint8_t>(64 + 4 * x + ((x / 4 + y / 4) % 2) * 30);
      neg.at(y, x) = static_cast<std::uint8_t>(255 - g.at(y, x));
    }
  const double s = ssim(g, neg);
  CHECK(std::abs(s - ssim_oracle(g, neg)) < 1e-6);
  CHECK(s < 0.3);
  CHECK_THROWS_AS(ssim(Image(10, 16, 1), Image(10, 16, 1)), std::invalid_argument);
  CHECK_THROWS_AS(ssim(Image(16, 16, 3), Image(16, 16, 3)), std::invalid_argument);
}

TEST_CASE("frechet distance") {
  Rng rng(4);
  const auto I = Eigen::MatrixXd::Identity(4, 4);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(4), mu(4);
  mu << 1.5, -2.0, 0.25, 3.0;
  CHECK(std::abs(frechet_distance(zero, I, mu, I) - mu.squaredNorm()) < 1e-9);
  const auto s = random_spd(rng, 4);
  CHECK(std::abs(frechet_distance(mu, s, mu, s)) < 1e-9);

  for (int t = 0; t < 10; ++t) {
    const auto s1 = random_spd(rng, 4), s2 = random_spd(rng, 4);
    Eigen::VectorXd m1 = Eigen::VectorXd::Random(4), m2 = Eigen::VectorXd::Random(4);
    // Eigenvalues of S1 S2 are real and positive; the trace of its square root
    // is the sum of their square roots.
    Eigen::EigenSolver<Eigen::MatrixXd> es(s1 * s2);
    double tr = 0;
    for (int i = 0; i < 4; ++i) tr += std::sqrt(es.eigenvalues()(i).real());
    const double oracle = (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2 * tr;
    const double d = frechet_distance(m1, s1, m2, s2);
    CHECK(std::abs(d - oracle) < 1e-6);
    CHECK(std::abs(d - frechet_distance(m2, s2, m1, s1)) < 1e-9);
    CHECK(d >= 0);
  }
  Eigen::MatrixXd asym = I;
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(frechet_distance(zero, asym, zero, I), std::invalid_argument);
  Eigen::MatrixXd neg = I;
  neg(2, 2) = -0.5;
  CHECK_THROWS_AS(frechet_distance(zero, neg, zero, I), std::invalid_argument);
  Eigen::MatrixXd tiny = I;
  tiny(3, 3) = -1e-10;  // inside the clamping tolerance
  CHECK_NOTHROW(frechet_distance(zero, tiny, zero, I));

  std::vector<std::vector<double>> f{{1, 2}, {3, 6}, {5, 4}};
  const auto g = fit_gaussian(f);
  CHECK(g.mean(0) == doctest::Approx(3.0));
  CHECK(g.cov(0, 0) == doctest::Approx(4.0));
  CHECK(g.cov(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("consistency evaluation") {
  const auto eval = data::generate_dataset(24, 5);
  double ceiling = 0;
  for (const auto& s : eval) ceiling += f1_oracle(data::sobel_otsu_edges(s.image), s.edge);
  ceiling /= static_cast<double>(eval.size());

  EvalOptions opts;
  opts.batch = 5;
  opts.config_hash = "abc";
  const auto r = consistency_eval(oracle_generator(), eval, {Modality::Edge, Modality::Depth, Modality::Hed}, opts);
  CHECK(std::abs(r.at(Modality::Edge).score - ceiling) <= 0.02);
  CHECK(r.at(Modality::Depth).metric == Metric::Rmse);
  CHECK(r.at(Modality::Depth).score >= 0);
  CHECK(r.at(Modality::Hed).score <= 1.0);
  CHECK(r.count == 24);
  CHECK_THROWS_AS(consistency_eval(oracle_generator(), {}, {Modality::Edge}), std::invalid_argument);

  const auto rows = r.csv_rows();
  CHECK(rows.size() == 3);
  CHECK(rows[0].rfind("edge,f1,", 0) == 0);
  CHECK(MetricReport::csv_header() == "modality,metric,score,count,frechet,config_hash");
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["scores"].size() == 3);
  CHECK(j["config_hash"] == "abc");
  CHECK(j["frechet"].is_null());

  const Embedder emb = pooled_rgb;
  opts.embedder = &emb;
  const auto withf = consistency_eval(oracle_generator(), eval, {Modality::Edge}, opts);
  REQUIRE(withf.frechet.has_value());
  CHECK(std::abs(*withf.frechet) < 1e-9);
}

TEST_CASE("model-driven evaluation is deterministic and batch-independent") {
  Rng rng(6);
  TokenizerConfig tc;
  tc.vocab = 16, tc.code_dim = 4, tc.channels = {4, 4, 4};
  Tokenizer<float> tok(tc, rng);
  tok.codebook().mutable_value() = randn<float>({16, 4}, rng);
  DecoderConfig dc;
  dc.layers = 2, dc.d_model = 16, dc.heads = 2, dc.vocab = 16, dc.code_dim = 4;
  Decoder<float> dec(dc, rng);
  EncoderConfig ec;
  ec.depth = 8, ec.width = 8, ec.heads = 2;
  ControlEncoder<float> enc(ec);
  auto ex = as_extractor(enc);
  ProjectionBank<float> bank({Sharing::PerScaleLayer, Structure::Linear, 8, {1, 2}}, dc.schedule, enc.feature_dim(), 16, rng);
  for (auto p : bank.params()) p.var.mutable_value() = randn<float>(p.var.shape(), rng, 0.3);
  GuidanceConfig g;
  g.top_k = 8, g.seed = 9;
  const auto gen = model_generator<float>({&tok, &dec, &bank}, &ex, nullptr, g);
  const auto eval = data::generate_dataset(6, 8);
  EvalOptions a, b;
  a.batch = 6, b.batch = 4;
  const auto ra = consistency_eval(gen, eval, {Modality::Edge}, a);
  const auto rb = consistency_eval(gen, eval, {Modality::Edge}, b);
  CHECK(ra.to_json() == rb.to_json());
  CHECK(ra.to_json() == consistency_eval(gen, eval, {Modality::Edge}, a).to_json());
  const auto uncond = model_generator<float>({&tok, &dec, nullptr}, nullptr, nullptr, g);
  CHECK(consistency_eval(uncond, eval, {Modality::Edge}, a).count == 6);
}
