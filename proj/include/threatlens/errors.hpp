#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace threatlens {

// Root of every error raised by the library. Callers that only need to know
// "data or model problem" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define THREATLENS_DEFINE_ERROR(Name)     \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

// textprep
THREATLENS_DEFINE_ERROR(EmptyAfterNormalization);
THREATLENS_DEFINE_ERROR(EmptyCorpus);
THREATLENS_DEFINE_ERROR(InvalidKeyword);

// tensorcore
THREATLENS_DEFINE_ERROR(ShapeError);
THREATLENS_DEFINE_ERROR(IndexError);
THREATLENS_DEFINE_ERROR(WindowTooLarge);
THREATLENS_DEFINE_ERROR(EmptyFeatureMap);
THREATLENS_DEFINE_ERROR(InvalidProbability);
THREATLENS_DEFINE_ERROR(EmptySequence);
THREATLENS_DEFINE_ERROR(GradientUnavailable);
THREATLENS_DEFINE_ERROR(NumericError);
THREATLENS_DEFINE_ERROR(CheckpointError);

// crf / ner
THREATLENS_DEFINE_ERROR(InvalidLabel);

// trainer / pipeline
THREATLENS_DEFINE_ERROR(InsufficientData);
THREATLENS_DEFINE_ERROR(ConfigError);
THREATLENS_DEFINE_ERROR(VocabularyMismatch);

#undef THREATLENS_DEFINE_ERROR

// Parse failure in an input file. `line` is 1-based; 0 means "whole file".
class FormatError : public Error {
 public:
  FormatError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        source_(source),
        line_(line) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

}  // namespace threatlens
