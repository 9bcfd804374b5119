#include "fedtwins/error.hpp"

namespace fedtwins {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Dimension: return "dimension error";
    case ErrorCode::Shape: return "shape error";
    case ErrorCode::NumericDomain: return "numeric-domain error";
    case ErrorCode::Contract: return "contract error";
    case ErrorCode::Format: return "format error";
    case ErrorCode::Range: return "range error";
    case ErrorCode::DegenerateBatch: return "degenerate-batch error";
    case ErrorCode::DegenerateData: return "degenerate-data error";
    case ErrorCode::DegenerateWeights: return "degenerate-weights error";
    case ErrorCode::EmptySubset: return "empty-subset error";
    case ErrorCode::Split: return "split error";
    case ErrorCode::FederationStall: return "federation-stall error";
    case ErrorCode::Config: return "config error";
    case ErrorCode::Io: return "I/O error";
  }
  return "unknown error";
}

}  // namespace fedtwins
