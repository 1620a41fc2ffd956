#include "dto/error.hpp"

namespace dto {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::tape: return "tape";
    case ErrorKind::data: return "data";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::checkpoint_magic: return "checkpoint-magic";
    case ErrorKind::checkpoint_truncated: return "checkpoint-truncated";
    case ErrorKind::checkpoint_dimension: return "checkpoint-dimension";
    case ErrorKind::architecture: return "architecture";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  return 10 + static_cast<int>(kind);
}

}  // namespace dto
