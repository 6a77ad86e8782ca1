#include "qmcfem/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qmcfem {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw std::out_of_range("no CSV column named " + name);
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const std::string& f = rows.at(row).at(column(name));
  if (f == "nan" || f.empty()) return std::nan("");
  if (f == "inf") return INFINITY;
  if (f == "-inf") return -INFINITY;
  return std::stod(f);
}

std::string to_csv_string(const CsvTable& table) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& f) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (f[i].find(',') != std::string::npos) throw std::invalid_argument("CSV field contains a comma");
      os << (i ? "," : "") << f[i];
    }
    os << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) throw std::invalid_argument("CSV row width differs from header");
    line(r);
  }
  return os.str();
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv_string(table);
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (first) {
      t.header = std::move(f);
      first = false;
    } else {
      if (f.size() != t.header.size()) throw std::runtime_error("CSV row width differs from header in " + path.string());
      t.rows.push_back(std::move(f));
    }
  }
  return t;
}

}  // namespace qmcfem
