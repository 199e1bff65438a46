#include <doctest.h>

#include <cmath>
#include <fstream>

#include "missvae/dataset.hpp"
#include "missvae/errors.hpp"
#include "support/testbed.hpp"

using namespace missvae;

TEST_CASE("uniform MCAR hits the rate and leaves no empty row") {
  Rng rng(1);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 20000) + Eigen::MatrixXd::Constant(5, 20000, 3.0);
  const IncompleteDataset d = apply_uniform_mcar(x, 0.5, rng);
  const double missing = 1.0 - static_cast<double>(d.observed_count()) / 100000.0;
  // rows are redrawn until something is observed: E[missing | not all missing] / 5
  const double expected = (2.5 - 5.0 / 32.0) / (1.0 - 1.0 / 32.0) / 5.0;
  CHECK(std::abs(missing - expected) < 0.005);
  for (Index i = 0; i < d.size(); ++i) {
    CHECK(d.mask.col(i).any());
    for (Index j = 0; j < 5; ++j) {
      if (d.mask(j, i))
        CHECK(d.values(j, i) == x(j, i));
      else
        CHECK(d.values(j, i) == 0.0);
    }
  }
  CHECK_NOTHROW(d.validate());
}

TEST_CASE("quadrant masks cover exactly two quadrants") {
  Rng rng(2);
  const Eigen::MatrixXd img = Eigen::MatrixXd::Ones(16, 50);
  const IncompleteDataset d = apply_quadrant_missingness(img, 4, 4, rng);
  for (Index i = 0; i < 50; ++i) CHECK(d.mask.col(i).count() == 8);
  CHECK(d.kinds[0] == FeatureKind::binary);
}

TEST_CASE("CSV round trip and ingestion errors") {
  const auto dir = testbed::scratch_dir("csv");
  Rng rng(3);
  Eigen::MatrixXd x(3, 4);
  x << 0.1, 1e-17, -3.25, 1.0 / 3.0, 2, 3, 4, 5, 6, 7, 8, 9;
  const IncompleteDataset d = apply_uniform_mcar(x, 0.4, rng);
  write_csv(d, dir / "a.csv");
  const IncompleteDataset r = load_csv(dir / "a.csv");
  CHECK((r.mask == d.mask).all());
  CHECK(r.values == d.values);

  {
    std::ofstream out(dir / "bad.csv");
    out << "1,2\n3,abc\n";
  }
  try {
    load_csv(dir / "bad.csv");
    FAIL("expected an ingestion error");
  } catch (const IngestionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("column 2") != std::string::npos);
  }
}

TEST_CASE("zero-mask encoding") {
  Eigen::VectorXd v(3);
  v << 1.5, 7.0, -2.0;
  Mask m(3);
  m << true, false, true;
  const Eigen::VectorXd e = zero_mask_encode(v, m);
  CHECK(e.size() == 6);
  CHECK(e[1] == 0.0);
  CHECK(e[0] == 1.5);
  CHECK(e[3] == 1.0);
  CHECK(e[4] == 0.0);
}

TEST_CASE("standardization uses observed moments and inverts") {
  Rng rng(4);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 500) * 4.0;
  const IncompleteDataset d = apply_uniform_mcar(x, 0.3, rng);
  const auto [s, rec] = standardize_observed(d);
  for (Index j = 0; j < 3; ++j) {
    double sum = 0, sq = 0, n = 0;
    for (Index i = 0; i < d.size(); ++i)
      if (d.mask(j, i)) sum += s.values(j, i), sq += s.values(j, i) * s.values(j, i), ++n;
    CHECK(sum / n == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-12));
  }
  const IncompleteDataset back = invert_standardization(s, rec);
  for (Index i = 0; i < d.size(); ++i)
    for (Index j = 0; j < 3; ++j)
      if (d.mask(j, i)) CHECK(back.values(j, i) == doctest::Approx(d.values(j, i)).epsilon(1e-12));

  IncompleteDataset flat = make_complete(Eigen::MatrixXd::Ones(2, 10));
  CHECK_THROWS(standardize_observed(flat));
}

TEST_CASE("bundle save and load, missing files listed") {
  const auto dir = testbed::scratch_dir("bundle");
  Rng rng(5);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 30);
  DatasetBundle b;
  b.data = apply_uniform_mcar(x, 0.3, rng);
  b.complete = x;
  b.provenance = {{"source", "unit"}};
  save_bundle(b, dir / "b");
  const DatasetBundle r = load_bundle(dir / "b");
  CHECK(r.data.values == b.data.values);
  CHECK((r.data.mask == b.data.mask).all());
  REQUIRE(r.complete);
  CHECK(*r.complete == x);
  CHECK(r.provenance["source"] == "unit");
  try {
    load_bundle(dir / "nothing");
    FAIL("expected an ingestion error");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("values.csv") != std::string::npos);
  }
}
