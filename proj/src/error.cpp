#include "folio/error.hpp"

namespace folio {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::usage: return "usage";
        case ErrorKind::data: return "data";
        case ErrorKind::feasibility: return "feasibility";
        case ErrorKind::numerical: return "numerical";
        case ErrorKind::contract: return "contract";
    }
    return "unknown";
}

}  // namespace folio
