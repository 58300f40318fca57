#include "bido/error.hpp"

namespace bido {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::OutOfBounds: return "OutOfBounds";
        case ErrorCode::Overlap: return "Overlap";
        case ErrorCode::BadGeometry: return "BadGeometry";
        case ErrorCode::EncodeFailure: return "EncodeFailure";
        case ErrorCode::MalformedContainer: return "MalformedContainer";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::DegenerateBatch: return "DegenerateBatch";
        case ErrorCode::DegenerateCorpus: return "DegenerateCorpus";
        case ErrorCode::EmptyEvalSet: return "EmptyEvalSet";
        case ErrorCode::SpecOverflow: return "SpecOverflow";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::BadConfig: return "BadConfig";
        case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    }
    return "Unknown";
}

}  // namespace bido
