#pragma once

#include "mlmatvamp/core.hpp"

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

namespace mlmv {

// Identifies the configuration and seed behind every output file.
struct Provenance {
  std::string config_hash = "none";
  std::uint64_t seed = 0;
};

// Shortest round-trip decimal form, '.' separator, independent of locale.
std::string format_double(double v);

// Comma-separated table whose first two columns are the provenance fields.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const Provenance& prov, std::initializer_list<std::string> columns);

  CsvWriter& field(const std::string& s);
  CsvWriter& field(double v);
  CsvWriter& field(long long v);
  CsvWriter& field(int v) { return field(static_cast<long long>(v)); }
  CsvWriter& field(Index v) { return field(static_cast<long long>(v)); }
  void end_row();

 private:
  std::ofstream out_;
  std::string prefix_;
  std::string row_;
  std::size_t columns_ = 0;
  std::size_t filled_ = 0;
};

}  // namespace mlmv
