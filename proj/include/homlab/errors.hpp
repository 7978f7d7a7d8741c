#pragma once

#include <stdexcept>
#include <string>

namespace homlab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// geometry / meshing
struct InclusionTouchesBoundary : Error { using Error::Error; };
struct ResolutionTooCoarse : Error { using Error::Error; };
struct NonTilingEpsilon : Error { using Error::Error; };
struct PointOutsideDomain : Error { using Error::Error; };
struct MeshError : Error { using Error::Error; };

// assembly / constraints
struct UnsupportedOrder : Error { using Error::Error; };
struct PhaseFieldMissing : Error { using Error::Error; };
struct MissingPeriodicPairs : Error { using Error::Error; };
struct EmptyBoundary : Error { using Error::Error; };
struct NonFiniteSample : Error { using Error::Error; };

// solvers
struct SolverError : Error { using Error::Error; };
struct NotConsistent : SolverError { using SolverError::SolverError; };
struct MaxIterations : SolverError { using SolverError::SolverError; };
struct Stagnation : SolverError { using SolverError::SolverError; };
struct RankDeficientB : SolverError { using SolverError::SolverError; };
struct InnerSolveFailure : SolverError { using SolverError::SolverError; };
struct NotConverged : SolverError { using SolverError::SolverError; };

// homogenization / coupling
struct ConsistencyViolation : Error { using Error::Error; };
struct CouplingSingular : Error { using Error::Error; };
struct IncompatibleInputs : Error { using Error::Error; };
struct EmptyWindow : Error { using Error::Error; };

// config / io
struct ConfigError : Error { using Error::Error; };
struct ParseError : ConfigError { using ConfigError::ConfigError; };
struct UnknownKey : ConfigError { using ConfigError::ConfigError; };
struct InvalidValue : ConfigError { using ConfigError::ConfigError; };
struct IoError : Error { using Error::Error; };

} // namespace homlab
