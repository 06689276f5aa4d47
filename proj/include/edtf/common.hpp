#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace edtf {

// Dense row-major matrix in f64. All forensic math runs in this type even when
// archives store f32.
using WeightMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
    ZeroRow,
    DivisionByNearZero,
    ConvergenceFailure,
    IndexOutOfRange,
    DimensionMismatch,
    DegenerateSpectrum,
    NonFiniteValue,
    SequenceTooLong,
    TokenOutOfRange,
    SingularCovariance,
    OptimizationFailed,
    AllZeroUpdate,
    AllZeroRows,
    DegenerateMAD,
    InsufficientData,
    NonConvergence,
    ShapeMismatch,
    NonFiniteLoss,
    EmptySplit,
    InsufficientRelations,
    VocabExhausted,
    ParseError,
    RecordInvalid,
    IoError,
    DuplicateName,
    BadMagic,
    UnsupportedVersion,
    ChecksumMismatch,
    InvalidConfig,
};

const char * error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string & what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Throws NonFiniteValue / DimensionMismatch when the matrix violates the
// WeightMatrix invariants (non-empty, all entries finite).
void validate_matrix(const WeightMatrix & m, const char * what);

inline double frobenius_relative_error(const WeightMatrix & approx, const WeightMatrix & ref) {
    const double denom = ref.norm();
    const double diff = (approx - ref).norm();
    return denom > 0.0 ? diff / denom : diff;
}

// splitmix64: used to derive independent child seeds from one global seed.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace edtf
