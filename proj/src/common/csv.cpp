#include "threatlens/csv.hpp"

#include "threatlens/errors.hpp"

namespace threatlens {

CsvReader::CsvReader(std::istream& in, std::string source_name)
    : in_(in), source_(std::move(source_name)) {}

std::optional<CsvRecord> CsvReader::next() {
  if (in_.peek() == std::char_traits<char>::eof()) return std::nullopt;

  CsvRecord record;
  record.line = line_;
  std::string field;
  bool in_quotes = false;
  bool field_was_quoted = false;

  for (;;) {
    const int raw = in_.get();
    if (raw == std::char_traits<char>::eof()) {
      if (in_quotes) throw FormatError(source_, record.line, "unterminated quoted field");
      break;
    }
    const char ch = static_cast<char>(raw);

    if (in_quotes) {
      if (ch == '"') {
        if (in_.peek() == '"') {
          in_.get();
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line_;
        field.push_back(ch);
      }
      continue;
    }

    if (ch == '"') {
      if (!field.empty() || field_was_quoted) {
        throw FormatError(source_, line_, "quote inside unquoted field");
      }
      in_quotes = true;
      field_was_quoted = true;
    } else if (ch == ',') {
      record.fields.push_back(std::move(field));
      field.clear();
      field_was_quoted = false;
    } else if (ch == '\r') {
      if (in_.peek() == '\n') continue;
      ++line_;
      break;
    } else if (ch == '\n') {
      ++line_;
      break;
    } else {
      field.push_back(ch);
    }
  }
  record.fields.push_back(std::move(field));
  return record;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_escape(fields[i]);
  }
  out << '\n';
}

}  // namespace threatlens
