#pragma once

#include <stdexcept>
#include <string>

namespace wfdiff {

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or unsupported file content (PPM/PGM, WFDT, checkpoints, CSV).
class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// An inverse Fourier transform produced an imaginary residue above tolerance.
class SymmetryError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// backward() called on something that is not a differentiable scalar.
class GraphError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace wfdiff
