#pragma once

#include <stdexcept>
#include <string>

namespace fssl {

// Base class for all typed errors thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Audio shorter than one analysis window.
class ShortClipError : public Error {
 public:
  using Error::Error;
};

// Statistics or training requested over an empty corpus.
class EmptyCorpusError : public Error {
 public:
  using Error::Error;
};

// Feature dimension does not match the statistics it is normalized with.
class DimMismatchError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// API contract violated (non-scalar loss, mismatched keysets, empty input...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Every prediction target falls past the end of the input sequence.
class EmptyTargetsError : public Error {
 public:
  using Error::Error;
};

// Invalid or infeasible configuration value; message carries the key path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Manifest or WAV ingestion failure; message carries the row number.
class IngestError : public Error {
 public:
  using Error::Error;
};

// A PR curve needs at least one positive and one negative example.
class DegenerateLabelsError : public Error {
 public:
  using Error::Error;
};

// Relative reporting against a zero baseline cell.
class ReportError : public Error {
 public:
  using Error::Error;
};

}  // namespace fssl
