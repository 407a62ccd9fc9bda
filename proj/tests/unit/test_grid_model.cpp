#include <doctest.h>

#include <random>

#include "gridid/error.hpp"
#include "gridid/grid_model.hpp"
#include "../support.hpp"

using namespace gridid;

TEST_CASE("incidence of a single edge") {
  const std::vector<Branch> br{{0, 1}};
  const Incidence inc = build_incidence(br, 2);
  CHECK(inc.S.rows() == 1);
  CHECK(inc.S(0, 0) == 1);
  CHECK(inc.S(0, 1) == -1);
  CHECK(inc.U(0, 0) == 0);
  CHECK(inc.U(0, 1) == 1);
}

TEST_CASE("incidence of a 3-bus path") {
  const std::vector<Branch> br{{0, 1}, {1, 2}};
  Eigen::MatrixXi expected(2, 3);
  expected << 1, -1, 0, 0, 1, -1;
  CHECK(build_incidence(br, 3).S == expected);
}

TEST_CASE("invalid branch lists are rejected") {
  CHECK_THROWS_AS(build_incidence(std::vector<Branch>{{0, 0}}, 2), InputError);
  CHECK_THROWS_AS(build_incidence(std::vector<Branch>{{0, 2}}, 2), InputError);
  CHECK_THROWS_AS(build_incidence(std::vector<Branch>{{-1, 1}}, 2), InputError);
  CHECK_THROWS_AS(build_incidence(std::vector<Branch>{{0, 1}, {0, 1}}, 2), InputError);
  CHECK_THROWS_AS(build_incidence(std::vector<Branch>{{0, 1}, {1, 0}}, 2), InputError);
  CHECK_THROWS_AS(GridSpec(3, {{0, 1}}, 3), InputError);
}

TEST_CASE("grid spec normalizes orientation") {
  const GridSpec spec(3, {{2, 0}, {1, 2}}, 0);
  CHECK(spec.branches()[0] == Branch{0, 2});
  CHECK(spec.incidence()(0, 0) == 1);
  CHECK(spec.incidence()(0, 2) == -1);
  CHECK(spec.find_branch(2, 0) == 0);
  CHECK(spec.find_branch(1, 2) == 1);
  CHECK_FALSE(spec.find_branch(0, 1).has_value());
}

TEST_CASE("complete candidate set of 8 buses") {
  const GridSpec spec = GridSpec::complete(8);
  CHECK(spec.n_branch() == 28);
  for (int i = 0; i < spec.n_branch(); ++i) {
    const auto row = spec.incidence().row(i);
    CHECK(row.sum() == 0);
    CHECK(row.cwiseAbs().sum() == 2);
    CHECK(spec.incidence()(i, spec.index()(i, 0)) == 1);
    CHECK(spec.incidence()(i, spec.index()(i, 1)) == -1);
  }
}

TEST_CASE("admittance of one branch") {
  const GridSpec spec = GridSpec::complete(2);
  const StateParams p{Vector::Constant(1, 2.0), Vector::Constant(1, -5.0)};
  const Admittance y = assemble_admittance(spec, p);
  Matrix G(2, 2), B(2, 2);
  G << 2, -2, -2, 2;
  B << -5, 5, 5, -5;
  CHECK((y.G - G).norm() == 0.0);
  CHECK((y.B - B).norm() == 0.0);
}

TEST_CASE("admittance of an empty network and a path") {
  const GridSpec path(3, {{0, 1}, {1, 2}}, 0);
  const Admittance zero = assemble_admittance(path, {Vector::Zero(2), Vector::Zero(2)});
  CHECK(zero.G.isZero(0));
  CHECK(zero.B.isZero(0));

  Vector g(2);
  g << 1, 3;
  const Admittance y = assemble_admittance(path, {g, Vector::Zero(2)});
  CHECK(y.G(1, 1) == 4.0);
  CHECK(y.G(0, 1) == -1.0);
  CHECK(y.G(1, 2) == -3.0);
  CHECK(y.G(0, 2) == 0.0);
}

TEST_CASE("admittance dimension mismatch") {
  const GridSpec spec = GridSpec::complete(3);
  CHECK_THROWS_AS(assemble_admittance(spec, {Vector::Zero(2), Vector::Zero(3)}), InputError);
  CHECK_THROWS_AS(check_state_params(spec, {Vector::Constant(3, -1.0), Vector::Zero(3)}, true), InputError);
}

TEST_CASE("admittance properties on random instances") {
  std::mt19937_64 rng(11);
  const GridSpec spec = GridSpec::complete(16);
  for (int trial = 0; trial < 20; ++trial) {
    const StateParams p = testing::random_params(rng, spec.n_branch());
    const StateParams q = testing::random_params(rng, spec.n_branch());
    const Admittance yp = assemble_admittance(spec, p);
    const Admittance yq = assemble_admittance(spec, q);
    CHECK((yp.G - yp.G.transpose()).norm() == 0.0);
    CHECK((yp.B - yp.B.transpose()).norm() == 0.0);
    CHECK(yp.G.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
    CHECK(yp.B.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);

    const double a = 0.7, c = -1.3;
    const Admittance mix = assemble_admittance(spec, {a * p.g + c * q.g, a * p.b + c * q.b});
    CHECK((mix.G - (a * yp.G + c * yq.G)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((mix.B - (a * yp.B + c * yq.B)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("stacked parameter round trip") {
  Vector gb(4);
  gb << 1, 2, 3, 4;
  const StateParams s = StateParams::from_stacked(gb);
  CHECK(s.g(1) == 2.0);
  CHECK(s.b(0) == 3.0);
  CHECK(s.stacked() == gb);
}
