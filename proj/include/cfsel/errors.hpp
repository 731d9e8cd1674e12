#pragma once

#include <stdexcept>
#include <string>

namespace cfsel {

// Base class for everything this library throws.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// --- solver errors ---
struct QuasiSeparation : Error {
    explicit QuasiSeparation(const std::string& msg) : Error("quasi-separation: " + msg) {}
};
struct SingularHessian : Error {
    explicit SingularHessian(const std::string& msg) : Error("singular Hessian: " + msg) {}
};
struct DegenerateDesign : Error {
    explicit DegenerateDesign(const std::string& msg) : Error("degenerate design: " + msg) {}
};
struct NonConvergence : Error {
    explicit NonConvergence(const std::string& msg) : Error("no convergence: " + msg) {}
};
struct SingularNormalEquations : Error {
    explicit SingularNormalEquations(const std::string& msg)
        : Error("singular normal equations: " + msg) {}
};

// --- data / basis errors ---
struct SchemaMismatch : Error {
    explicit SchemaMismatch(const std::string& msg) : Error("schema mismatch: " + msg) {}
};
struct NegativeC : Error {
    explicit NegativeC(const std::string& msg) : Error("negative censoring value: " + msg) {}
};
struct MissingYWhenSelected : Error {
    explicit MissingYWhenSelected(const std::string& msg)
        : Error("missing outcome on selected row: " + msg) {}
};
struct YPresentWhenCensored : Error {
    explicit YPresentWhenCensored(const std::string& msg)
        : Error("outcome present on censored row: " + msg) {}
};
struct NonDifferentiableTerm : Error {
    explicit NonDifferentiableTerm(const std::string& msg)
        : Error("non-differentiable term: " + msg) {}
};

// --- effect / counterfactual errors ---
struct EmptyTrimmedSample : Error {
    explicit EmptyTrimmedSample(const std::string& msg) : Error("empty trimmed sample: " + msg) {}
};
struct EmptyConditioningCell : Error {
    explicit EmptyConditioningCell(const std::string& msg)
        : Error("empty conditioning cell: " + msg) {}
};
struct TauOutsideRange : Error {
    explicit TauOutsideRange(const std::string& msg) : Error("tau outside range: " + msg) {}
};
struct EmptySelectedCell : Error {
    explicit EmptySelectedCell(const std::string& msg) : Error("empty selected cell: " + msg) {}
};
struct BasisMismatch : Error {
    explicit BasisMismatch(const std::string& msg) : Error("basis mismatch: " + msg) {}
};

// --- inference errors ---
struct TooManyFailures : Error {
    explicit TooManyFailures(const std::string& msg)
        : Error("too many failed bootstrap replications: " + msg) {}
};
struct DegenerateScale : Error {
    explicit DegenerateScale(const std::string& msg) : Error("degenerate scale: " + msg) {}
};
struct SingularJ : Error {
    explicit SingularJ(const std::string& msg) : Error("singular J matrix: " + msg) {}
};

// --- configuration / CLI errors ---
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

}  // namespace cfsel
