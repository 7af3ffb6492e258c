#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gbtm/covariates.hpp"
#include "gbtm/simulator.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace gbtm;
using fixtures::Toy;
using fixtures::multinomial_toy;
using fixtures::with_intercept;

namespace {

std::vector<int> zero_based(const std::vector<int>& labels) {
  std::vector<int> y;
  for (int l : labels) y.push_back(l - 1);
  return y;
}

}  // namespace

TEST_CASE("three-class toy matches the gradient-ascent oracle") {
  Eigen::MatrixXd truth(3, 2);
  truth << 0.3, -1.0, 0.5, 0.4, 0.0, 0.0;
  const Toy toy = multinomial_toy(2024, 60, truth);
  const RegressionResult r = multinomial_fit(toy.X, toy.labels, std::nullopt, {"x"});
  REQUIRE(r.converged);
  CHECK(r.reference_group == 3);
  CHECK(r.groups == std::vector<int>{1, 2, 3});
  CHECK(r.term_names == std::vector<std::string>{"(Intercept)", "x"});
  const Eigen::MatrixXd B = oracle::multinomial_gradient_ascent(with_intercept(toy.X), zero_based(toy.labels), 3, 2);
  CHECK((r.coefficients - B).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(r.coefficients.row(2).isZero(0.0));
  REQUIRE(r.equations.size() == 2);
  for (const auto& eq : r.equations)
    for (std::size_t c = 0; c < eq.terms.size(); ++c) {
      const Coefficient& cf = eq.terms[c];
      CHECK(cf.b == r.coefficients(eq.group - 1, static_cast<Eigen::Index>(c)));
      CHECK(cf.exp_b == std::exp(cf.b));
      CHECK(cf.lo95 == std::exp(cf.b - 1.96 * cf.se));
      CHECK(cf.hi95 == std::exp(cf.b + 1.96 * cf.se));
      CHECK(cf.se > 0.0);
      CHECK_FALSE(cf.separated);
    }
}

TEST_CASE("model-fit statistics follow their definitions") {
  Eigen::MatrixXd truth(3, 3);
  truth << 0.2, 0.8, -0.5, -0.1, 0.3, 0.6, 0.0, 0.0, 0.0;
  const Toy toy = multinomial_toy(7, 300, truth);
  const RegressionResult r = multinomial_fit(toy.X, toy.labels);
  const double n = 300.0;
  std::vector<double> counts(3, 0.0);
  for (int l : toy.labels) counts[l - 1] += 1.0;
  double ll0 = 0.0;
  for (double c : counts) ll0 += c * std::log(c / n);
  CHECK(r.null_loglik == doctest::Approx(ll0).epsilon(1e-12));
  CHECK(r.model_chi2 == doctest::Approx(2.0 * (r.loglik - ll0)).epsilon(1e-12));
  CHECK(r.df == 4);
  CHECK(r.cox_snell_r2 == doctest::Approx(1.0 - std::exp(2.0 * (ll0 - r.loglik) / n)).epsilon(1e-12));
  CHECK(r.nagelkerke_r2 == doctest::Approx(r.cox_snell_r2 / (1.0 - std::exp(2.0 * ll0 / n))).epsilon(1e-12));
  CHECK(r.model_p < 1e-6);
  CHECK(r.n == 300);
  // SEs come from the inverse observed information: z-test p-values agree
  for (const auto& eq : r.equations)
    for (const auto& cf : eq.terms)
      CHECK(cf.p == doctest::Approx(std::erfc(std::abs(cf.b / cf.se) / std::sqrt(2.0))).epsilon(1e-9));
}

TEST_CASE("two groups reproduce binary logistic regression") {
  Eigen::MatrixXd truth(2, 3);
  truth << 0.0, 0.0, 0.0, 0.4, -0.9, 0.5;
  const Toy toy = multinomial_toy(99, 200, truth);
  const RegressionResult r = multinomial_fit(toy.X, toy.labels, 1);
  REQUIRE(r.converged);
  std::vector<int> y;
  for (int l : toy.labels) y.push_back(l == 2 ? 1 : 0);
  const Eigen::VectorXd b = oracle::logistic_irls(with_intercept(toy.X), y);
  CHECK((r.coefficients.row(1).transpose() - b).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("predicted probabilities sum to one") {
  Eigen::MatrixXd truth(4, 2);
  truth << 1.0, 2.0, 0.5, -1.0, -0.3, 0.2, 0.0, 0.0;
  const Toy toy = multinomial_toy(3, 150, truth);
  const RegressionResult r = multinomial_fit(toy.X, toy.labels);
  const Eigen::MatrixXd P = r.predict_probabilities(toy.X);
  CHECK(P.cols() == 4);
  CHECK((P.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  const std::vector<int> pred = r.predict(toy.X);
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    Eigen::Index k;
    P.row(i).maxCoeff(&k);
    CHECK(pred[i] == r.groups[k]);
  }
}

TEST_CASE("adding a predictor never lowers the log-likelihood") {
  Eigen::MatrixXd truth(3, 2);
  truth << 0.5, 1.0, 0.2, -0.5, 0.0, 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Toy toy = multinomial_toy(seed, 120, truth);
    std::mt19937_64 rng(seed + 50);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd X2(toy.X.rows(), 2);
    X2.col(0) = toy.X.col(0);
    for (Eigen::Index i = 0; i < X2.rows(); ++i) X2(i, 1) = z(rng);
    const double small = multinomial_fit(toy.X, toy.labels).loglik;
    const double big = multinomial_fit(X2, toy.labels).loglik;
    CHECK(big >= small - 1e-9);
  }
}

TEST_CASE("null predictors are rarely significant") {
  Eigen::MatrixXd truth(3, 2);
  truth << 0.0, 0.0, 0.0, 0.0, 0.0, 0.0;
  int pass = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Toy toy = multinomial_toy(1000 + seed, 300, truth);
    const RegressionResult r = multinomial_fit(toy.X, toy.labels);
    if (r.model_p > 0.05) ++pass;
    for (const auto& eq : r.equations) {
      CHECK(std::abs(eq.terms[1].b) < 0.5);
      CHECK(std::abs(eq.terms[1].exp_b - 1.0) < 0.7);
    }
  }
  CHECK(pass >= 9);
}

TEST_CASE("separation is flagged, not fatal") {
  Eigen::MatrixXd X(40, 1);
  std::vector<int> g;
  for (int i = 0; i < 40; ++i) {
    X(i, 0) = i < 20 ? -1.0 - 0.1 * i : 1.0 + 0.1 * i;
    g.push_back(i < 20 ? 1 : 2);
  }
  const RegressionResult r = multinomial_fit(X, g, std::nullopt, {"x"});
  REQUIRE(r.equations.size() == 1);
  const bool flagged = std::any_of(r.equations[0].terms.begin(), r.equations[0].terms.end(),
                                   [](const Coefficient& c) { return c.separated; });
  CHECK(flagged);
  CHECK_FALSE(r.warnings.empty());
  CHECK(r.predict(X) == g);
}

TEST_CASE("rank-deficient designs name the collinear predictors") {
  Eigen::MatrixXd truth(2, 2);
  truth << 0.0, 0.0, 0.3, 0.5;
  const Toy toy = multinomial_toy(5, 80, truth);
  Eigen::MatrixXd X(80, 3);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int i = 0; i < 80; ++i) {
    X(i, 0) = toy.X(i, 0);
    X(i, 1) = z(rng);
    X(i, 2) = 2.0 * toy.X(i, 0);
  }
  try {
    multinomial_fit(X, toy.labels, std::nullopt, {"n_authors", "n_pages", "double_authors"});
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("collinear") != std::string::npos);
    CHECK(msg.find("double_authors") != std::string::npos);
    CHECK(msg.find("n_authors") != std::string::npos);
    CHECK(msg.find("n_pages") == std::string::npos);
  }
}

TEST_CASE("input validation") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(10, 1);
  std::vector<int> one(10, 4);
  CHECK_THROWS_AS(multinomial_fit(X, one), ValidationError);
  std::vector<int> g = {1, 2, 1, 2, 1, 2, 1, 2, 1, 2};
  CHECK_THROWS_AS(multinomial_fit(X, g, 7), ValidationError);
  CHECK_THROWS_AS(multinomial_fit(X, std::span<const int>(g).first(5)), ValidationError);
  CHECK_THROWS_AS(multinomial_fit(X, g, std::nullopt, {"a", "b"}), ValidationError);
  Eigen::MatrixXd tiny = Eigen::MatrixXd::Random(3, 2);
  CHECK_THROWS_AS(multinomial_fit(tiny, std::span<const int>(g).first(3)), ValidationError);
  X(3, 0) = std::nan("");
  CHECK_THROWS_AS(multinomial_fit(X, g), ValidationError);
}

TEST_CASE("reference group is configurable") {
  Eigen::MatrixXd truth(3, 2);
  truth << 0.3, -1.0, 0.5, 0.4, 0.0, 0.0;
  const Toy toy = multinomial_toy(12, 200, truth);
  const RegressionResult a = multinomial_fit(toy.X, toy.labels);
  const RegressionResult b = multinomial_fit(toy.X, toy.labels, 1);
  CHECK(a.reference_group == 3);
  CHECK(b.reference_group == 1);
  CHECK(b.equations.front().group == 2);
  CHECK(a.loglik == doctest::Approx(b.loglik).epsilon(1e-10));
  // contrasts re-express against the new reference
  const Eigen::RowVectorXd shifted = a.coefficients.row(2) - a.coefficients.row(0);
  CHECK((b.coefficients.row(2) - shifted).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("odds ratio rounding as printed for author counts") {
  // Table row: B = -0.19 with Exp(B) .83
  CHECK(std::round(std::exp(-0.19) * 100.0) / 100.0 == 0.83);
  Coefficient c;
  c.b = -0.19;
  c.exp_b = std::exp(c.b);
  CHECK(std::round(c.exp_b * 100.0) == 83.0);
}

TEST_CASE("predictor encoding") {
  const std::vector<Predictor> preds = {
      {"journal", std::vector<std::string>{"Virology", "Cell", "Virology", "Gene"}},
      {"n_authors", std::vector<double>{1, 2, 3, 4}}};
  const Design d = encode_predictors(preds);
  CHECK(d.names == std::vector<std::string>{"journal=Gene", "journal=Virology", "n_authors"});
  Eigen::MatrixXd expect(4, 3);
  expect << 0, 1, 1, 0, 0, 2, 0, 1, 3, 1, 0, 4;
  CHECK(d.X == expect);
  const std::vector<Predictor> ragged = {{"a", std::vector<double>{1, 2}}, {"b", std::vector<double>{1}}};
  CHECK_THROWS_AS(encode_predictors(ragged), ValidationError);
}

TEST_CASE("chi-square examples") {
  SUBCASE("2x2 hand table") {
    Eigen::MatrixXd t(2, 2);
    t << 10, 20, 20, 10;
    const ChiSquareResult r = chi_square_test(t);
    CHECK(r.chi2 == doctest::Approx(oracle::pearson_chi2({{10, 20}, {20, 10}})).epsilon(1e-14));
    CHECK(std::abs(r.chi2 - 6.6667) < 1e-3);
    CHECK(r.df == 1);
    CHECK(std::abs(r.p - 0.0098) < 1e-3);
    CHECK(r.expected.isApprox(Eigen::MatrixXd::Constant(2, 2, 15.0)));
    CHECK(r.warnings.empty());
  }
  SUBCASE("observed equals expected") {
    Eigen::MatrixXd t(2, 2);
    t << 25, 25, 25, 25;
    const ChiSquareResult r = chi_square_test(t);
    CHECK(r.chi2 == 0.0);
    CHECK(r.p == 1.0);
  }
  SUBCASE("perfect dependence") {
    Eigen::MatrixXd t(2, 2);
    t << 30, 0, 0, 30;
    const ChiSquareResult r = chi_square_test(t);
    CHECK(r.chi2 == doctest::Approx(60.0).epsilon(1e-14));
    CHECK(r.p < 1e-10);
  }
  SUBCASE("larger table against the oracle") {
    Eigen::MatrixXd t(3, 4);
    t << 12, 7, 30, 2, 9, 14, 8, 11, 20, 3, 6, 16;
    std::vector<std::vector<double>> o(3, std::vector<double>(4));
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) o[r][c] = t(r, c);
    const ChiSquareResult r = chi_square_test(t);
    CHECK(r.chi2 == doctest::Approx(oracle::pearson_chi2(o)).epsilon(1e-13));
    CHECK(r.df == 6);
    CHECK(r.warnings.empty());
    Eigen::MatrixXd small(2, 2);
    small << 3, 1, 2, 4;
    REQUIRE(chi_square_test(small).warnings.size() == 1);
    CHECK(chi_square_test(small).warnings.front().find("below 5") != std::string::npos);
  }
  SUBCASE("zero marginals are dropped") {
    Eigen::MatrixXd t(2, 3);
    t << 5, 0, 7, 3, 0, 9;
    const ChiSquareResult r = chi_square_test(t);
    CHECK(r.df == 1);
    CHECK(r.observed.cols() == 2);
    CHECK(r.chi2 == doctest::Approx(oracle::pearson_chi2({{5, 7}, {3, 9}})).epsilon(1e-14));
    REQUIRE_FALSE(r.warnings.empty());
    CHECK(r.warnings.front().find("column 2") != std::string::npos);
  }
  SUBCASE("degenerate table") {
    Eigen::MatrixXd t(1, 3);
    t << 4, 5, 6;
    const ChiSquareResult r = chi_square_test(t);
    CHECK(r.chi2 == 0.0);
    CHECK(r.p == 1.0);
    CHECK_FALSE(r.warnings.empty());
  }
  SUBCASE("negative counts are rejected") {
    Eigen::MatrixXd t(2, 2);
    t << 1, -1, 2, 3;
    CHECK_THROWS_AS(chi_square_test(t), ValidationError);
  }
}

TEST_CASE("chi-square on categorical vectors is symmetric") {
  const std::vector<std::string> a = {"x", "y", "x", "z", "y", "x", "z", "z", "y", "x", "x", "y"};
  const std::vector<std::string> b = {"p", "q", "q", "p", "q", "p", "p", "q", "q", "p", "q", "p"};
  const ChiSquareResult ab = chi_square_test(std::span<const std::string>(a), std::span<const std::string>(b));
  const ChiSquareResult ba = chi_square_test(std::span<const std::string>(b), std::span<const std::string>(a));
  CHECK(ab.chi2 == doctest::Approx(ba.chi2).epsilon(1e-14));
  CHECK(ab.df == ba.df);
  CHECK(ab.row_labels == std::vector<std::string>{"x", "y", "z"});
  CHECK(ab.observed(0, 0) == 3.0);

  const std::vector<int> g = {1, 2, 1, 3, 2, 1, 3, 3, 2, 1, 1, 2};
  const ChiSquareResult cg = chi_square_test(std::span<const std::string>(a), std::span<const int>(g));
  CHECK(cg.chi2 == doctest::Approx(24.0).epsilon(1e-12));
  CHECK(cg.col_labels == std::vector<std::string>{"1", "2", "3"});
}

TEST_CASE("classification: the label itself predicts perfectly") {
  std::vector<int> g;
  std::vector<std::string> label;
  for (int i = 0; i < 60; ++i) {
    g.push_back(1 + i % 3);
    label.push_back("g" + std::to_string(1 + i % 3));
  }
  const ClassificationTable t = classify_membership({"label", {{"label", label}}}, g);
  CHECK(t.percent_correct == 100.0);
  CHECK(t.counts.sum() == 60);
  CHECK(t.counts.trace() == 60);
}

TEST_CASE("classification: noise collapses toward the majority class") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    const int n = 1200;
    std::vector<int> g(n);
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) {
      g[i] = 1 + i % 6;
      x[i] = z(rng);
    }
    const ClassificationTable t = classify_membership({"noise", {{"noise", x}}}, g);
    CHECK(t.counts.sum() == n);
    CHECK(t.percent_correct == doctest::Approx(100.0 * t.counts.trace() / n));
    CHECK(std::abs(t.percent_correct - 100.0 / 6.0) <= 5.0);
  }
}

TEST_CASE("classification: combined covariates beat each alone on S2") {
  const SimulatedData sim = generate(scenario_s2(31, 1000));
  std::vector<int> g;
  for (int a : sim.assignments) g.push_back(a + 1);
  const std::vector<Predictor> preds = covariate_predictors(sim.data);
  REQUIRE(preds.size() == 5);
  std::vector<PredictorSet> sets;
  for (const auto& p : preds) sets.push_back({p.name, {p}});
  sets.push_back({"combined", preds});
  const std::vector<ClassificationTable> tables = classification_table(sets, g);
  REQUIRE(tables.size() == 6);
  const double combined = tables.back().percent_correct;
  for (std::size_t i = 0; i + 1 < tables.size(); ++i) {
    INFO(tables[i].name);
    CHECK(combined >= tables[i].percent_correct);
  }
  // journal and author counts each carry signal above the majority share
  const double majority = 100.0 * std::count(g.begin(), g.end(), 1) / 1000.0;
  CHECK(tables[0].percent_correct > majority);
  CHECK(combined > majority + 5.0);
}

TEST_CASE("covariate predictors read every subject") {
  const SimulatedData sim = generate(scenario_s2(2, 50));
  const auto preds = covariate_predictors(sim.data);
  CHECK(preds[0].name == "journal");
  CHECK(std::get<std::vector<std::string>>(preds[0].values).size() == 50);
  CHECK(std::get<std::vector<double>>(preds[2].values)[0] == sim.data.covariates[0].n_authors);
}
