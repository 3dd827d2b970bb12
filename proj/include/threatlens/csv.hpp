#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace threatlens {

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;  // line on which the record starts (1-based)
};

// RFC-4180 reader: comma separated, double-quoted fields with "" escapes,
// embedded newlines inside quotes, CRLF or LF line endings.
class CsvReader {
 public:
  CsvReader(std::istream& in, std::string source_name);

  // Returns the next record, or nullopt at end of input. An unterminated
  // quoted field throws FormatError.
  std::optional<CsvRecord> next();

  const std::string& source() const noexcept { return source_; }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_ = 1;
};

// Quotes a field only when it contains a comma, quote, CR or LF.
std::string csv_escape(const std::string& field);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace threatlens
