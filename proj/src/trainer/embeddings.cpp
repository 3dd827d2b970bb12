#include "threatlens/embeddings.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "threatlens/errors.hpp"

namespace threatlens {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream in(line);
  std::string field;
  while (in >> field) fields.push_back(field);
  return fields;
}

bool is_count(const std::string& text) {
  return !text.empty() && text.find_first_not_of("0123456789") == std::string::npos;
}

double parse_value(const std::string& text, const std::string& source, std::size_t line) {
  double value = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(value)) {
    throw FormatError(source, line, "bad vector component '" + text + "'");
  }
  return value;
}

}  // namespace

PretrainedTable read_pretrained(std::istream& in, const Vocabulary& vocab, std::uint64_t seed,
                                const std::string& source_name) {
  PretrainedTable result;
  std::vector<std::vector<double>> rows(vocab.word_count());
  std::vector<bool> seen(vocab.word_count(), false);
  // Welford accumulators over all values in the file.
  std::size_t count = 0;
  double mean = 0.0, m2 = 0.0;

  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (number == 1 && fields.size() == 2 && is_count(fields[0]) && is_count(fields[1])) continue;
    if (fields.size() < 2) throw FormatError(source_name, number, "expected a word and a vector");
    const std::size_t dim = fields.size() - 1;
    if (result.dim == 0) result.dim = dim;
    if (dim != result.dim) {
      throw FormatError(source_name, number,
                        "expected " + std::to_string(result.dim) + " components, got " +
                            std::to_string(dim));
    }
    std::vector<double> values(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      values[j] = parse_value(fields[j + 1], source_name, number);
      ++count;
      const double delta = values[j] - mean;
      mean += delta / static_cast<double>(count);
      m2 += delta * (values[j] - mean);
    }
    const int id = vocab.word_id(fields[0]);
    if (id <= Vocabulary::kUnk || vocab.word(id) != fields[0] || seen[id]) continue;
    seen[id] = true;
    rows[id] = std::move(values);
  }
  if (result.dim == 0) throw FormatError(source_name, 0, "no vectors");

  result.stddev = count > 1 ? std::sqrt(m2 / static_cast<double>(count)) : 0.0;
  const double bound = result.stddev * std::sqrt(3.0);
  Rng rng(seed);
  result.table = Tensor({vocab.word_count(), result.dim});
  auto out = result.table.values();
  for (std::size_t id = 0; id < vocab.word_count(); ++id) {
    double* row = out.data() + id * result.dim;
    if (id == static_cast<std::size_t>(Vocabulary::kPad)) continue;
    if (seen[id]) {
      std::copy(rows[id].begin(), rows[id].end(), row);
      ++result.found;
      continue;
    }
    for (std::size_t j = 0; j < result.dim; ++j) row[j] = rng.uniform(-bound, bound);
    if (id != static_cast<std::size_t>(Vocabulary::kUnk)) ++result.missing;
  }
  return result;
}

PretrainedTable load_pretrained(const std::filesystem::path& path, const Vocabulary& vocab,
                                std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open file");
  return read_pretrained(in, vocab, seed, path.string());
}

}  // namespace threatlens
