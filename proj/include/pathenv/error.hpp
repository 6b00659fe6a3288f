#pragma once

#include <stdexcept>
#include <string>

namespace pathenv {

// Precondition violated by the caller (bad dimensions, out-of-range argument).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input the model cannot represent, e.g. fewer than four distinct x values.
class UnsupportedInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite or otherwise malformed numeric data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Covariance matrix not numerically positive definite.
class IllConditioned : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// X' Sigma^-1 X singular.
class DesignDegenerate : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Response lies in the column space of X, so the profiled error variance is zero.
class DegenerateResponse : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input files that cannot be reconciled (misaligned samples, missing values).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

}  // namespace pathenv
