#pragma once

// Pretrained word vectors in text format: one "word v1 ... vd" per line, with
// an optional word2vec "count dim" header line.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>

#include "threatlens/tensor.hpp"
#include "threatlens/textprep.hpp"

namespace threatlens {

struct PretrainedTable {
  Tensor table;  // [vocab.word_count() x dim]
  std::size_t dim = 0;
  std::size_t found = 0;    // vocabulary words present in the file
  std::size_t missing = 0;  // vocabulary words given random vectors
  double stddev = 0.0;      // over every value in the file
};

// Builds an embedding table for `vocab`. Words are matched exactly and the
// first occurrence wins. The PAD row is zero; UNK and words absent from the
// file get U(-s*sqrt(3), s*sqrt(3)) with s the file's standard deviation,
// drawn in id order from `seed`. A row of the wrong width throws FormatError.
PretrainedTable read_pretrained(std::istream& in, const Vocabulary& vocab, std::uint64_t seed,
                                const std::string& source_name = "<vectors>");
PretrainedTable load_pretrained(const std::filesystem::path& path, const Vocabulary& vocab,
                                std::uint64_t seed);

}  // namespace threatlens
