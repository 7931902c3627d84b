#pragma once

#include <stdexcept>
#include <string>

namespace mpq {

enum class Errc {
  // graph
  EmptyGraph,
  CycleDetected,
  MultipleSinks,
  DanglingEdge,
  DuplicateEdge,
  InvalidVertex,
  NonConvergingFrontier,
  GroupTooLarge,
  IndexOutOfRange,
  // tensors / autodiff
  ShapeMismatch,
  NonFiniteData,
  NumericOverflow,
  LengthMismatch,
  MissingBinding,
  OpaqueLayer,
  // sensitivity / perf / solver
  MissingSensitivity,
  MissingEntry,
  InvalidFormat,
  TooLarge,
  Infeasible,
  MultiFormatUnsupported,
  // io
  ParseError,
  SchemaVersionMismatch,
  MissingInput,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::EmptyGraph: return "EmptyGraph";
    case Errc::CycleDetected: return "CycleDetected";
    case Errc::MultipleSinks: return "MultipleSinks";
    case Errc::DanglingEdge: return "DanglingEdge";
    case Errc::DuplicateEdge: return "DuplicateEdge";
    case Errc::InvalidVertex: return "InvalidVertex";
    case Errc::NonConvergingFrontier: return "NonConvergingFrontier";
    case Errc::GroupTooLarge: return "GroupTooLarge";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteData: return "NonFiniteData";
    case Errc::NumericOverflow: return "NumericOverflow";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::MissingBinding: return "MissingBinding";
    case Errc::OpaqueLayer: return "OpaqueLayer";
    case Errc::MissingSensitivity: return "MissingSensitivity";
    case Errc::MissingEntry: return "MissingEntry";
    case Errc::InvalidFormat: return "InvalidFormat";
    case Errc::TooLarge: return "TooLarge";
    case Errc::Infeasible: return "Infeasible";
    case Errc::MultiFormatUnsupported: return "MultiFormatUnsupported";
    case Errc::ParseError: return "ParseError";
    case Errc::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case Errc::MissingInput: return "MissingInput";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace mpq
