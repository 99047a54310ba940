#include "mlmatvamp/io.hpp"

#include <charconv>
#include <cmath>

namespace mlmv {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::string& path, const Provenance& prov, std::initializer_list<std::string> columns)
    : out_(path, std::ios::binary), columns_(columns.size()) {
  if (!out_) throw Error(ErrorKind::invalid_config, "cannot write '" + path + "'");
  out_ << "config_hash,seed";
  for (const auto& c : columns) out_ << ',' << c;
  out_ << '\n';
  prefix_ = prov.config_hash + ',' + std::to_string(prov.seed);
}

CsvWriter& CsvWriter::field(const std::string& s) {
  row_ += ',';
  row_ += s;
  ++filled_;
  return *this;
}

CsvWriter& CsvWriter::field(double v) { return field(format_double(v)); }

CsvWriter& CsvWriter::field(long long v) { return field(std::to_string(v)); }

void CsvWriter::end_row() {
  if (filled_ != columns_) throw Error(ErrorKind::numerical, "csv row has the wrong number of fields");
  out_ << prefix_ << row_ << '\n';
  row_.clear();
  filled_ = 0;
}

}  // namespace mlmv
