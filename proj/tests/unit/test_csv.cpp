#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "qmcfem/csv.hpp"

using namespace qmcfem;

TEST_CASE("format_double round-trips exactly") {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1.0 / 3.0, 6.02214076e23, 5e-324, 1.7976931348623157e308}) {
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  }
  CHECK(format_double(std::nan("")) == "nan");
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("tables survive a file round trip including empty trailing fields") {
  CsvTable t;
  t.header = {"a", "b", "c"};
  t.rows = {{"1", format_double(0.1), ""}, {"2", "nan", "x"}};
  const auto path = std::filesystem::temp_directory_path() / "qmcfem_csv_roundtrip.csv";
  write_csv(path, t);
  const CsvTable r = read_csv(path);
  CHECK(r.header == t.header);
  CHECK(r.rows == t.rows);
  CHECK(r.number(0, "b") == 0.1);
  CHECK(std::isnan(r.number(0, "c")));
  CHECK(std::isnan(r.number(1, "b")));
  CHECK_THROWS_AS(r.column("missing"), std::out_of_range);
  std::filesystem::remove(path);
}

TEST_CASE("malformed tables are rejected") {
  CsvTable t;
  t.header = {"a", "b"};
  t.rows = {{"1"}};
  CHECK_THROWS(to_csv_string(t));
  t.rows = {{"1,2", "3"}};
  CHECK_THROWS(to_csv_string(t));
}
