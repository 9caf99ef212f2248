#pragma once

#include <stdexcept>
#include <string>

namespace cfc {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes (messages name both shapes).
struct ShapeError : Error {
    using Error::Error;
};

// Invalid or empty row span.
struct SpanError : Error {
    using Error::Error;
};

// Input that is structurally valid but semantically empty, e.g. a fully
// masked softmax slice or a zero-length sequence.
struct DegenerateInputError : Error {
    using Error::Error;
};

// Tape misuse, e.g. calling backward twice on the same tape.
struct TapeStateError : Error {
    using Error::Error;
};

// NaN/Inf detected in the result of a forward op.
struct NumericError : Error {
    using Error::Error;
};

// Token id outside the vocabulary.
struct VocabError : Error {
    using Error::Error;
};

// Invalid configuration value or combination.
struct ConfigError : Error {
    using Error::Error;
};

// Answer index outside the candidate list.
struct LabelError : Error {
    using Error::Error;
};

// Dataset file problems that abort the whole load (per-record problems are
// collected, not thrown).
struct IngestError : Error {
    using Error::Error;
};

// Malformed embedding-file line.
struct ParseError : Error {
    using Error::Error;
};

// Unreadable, corrupt, or incompatible checkpoint.
struct CheckpointError : Error {
    using Error::Error;
};

// Training diverged (non-finite loss or gradient).
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace cfc
