#include "ldaprune/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "ldaprune/error.hpp"

namespace ldaprune {

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  fail(ErrorKind::Format, "CSV has no column '" + name + "'");
}

const std::string& CsvTable::text(std::size_t row, const std::string& name) const {
  require(row < rows.size(), ErrorKind::InvalidArgument, "CSV row out of range");
  return rows[row].at(column(name));
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const std::string& cell = text(row, name);
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used == cell.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::Format, "CSV cell '" + cell + "' in column '" + name + "' is not a number");
}

std::string format_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

std::string to_csv_string(const CsvTable& table) {
  std::ostringstream os;
  auto line = [&os](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      require(cells[i].find_first_of(",\n\"") == std::string::npos, ErrorKind::InvalidArgument,
              "CSV cell contains a delimiter: " + cells[i]);
      if (i) os << ',';
      os << cells[i];
    }
    os << '\n';
  };
  line(table.header);
  for (const auto& row : table.rows) {
    require(row.size() == table.header.size(), ErrorKind::Dimension,
            "CSV row width does not match header");
    line(row);
  }
  return os.str();
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << to_csv_string(table);
}

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      require(cells.size() == table.header.size(), ErrorKind::Format,
              "CSV row has " + std::to_string(cells.size()) + " cells, header has " +
                  std::to_string(table.header.size()));
      table.rows.push_back(std::move(cells));
    }
  }
  require(!first, ErrorKind::Format, "CSV is empty");
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

}  // namespace ldaprune
