#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace icwlm {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;
using RMatrix = Eigen::MatrixXd;

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kPi = 3.14159265358979323846;

// The three tasks one model is trained on. The numeric values are used as
// indices into per-task arrays (loss weights, proportions, histories).
enum class Task : int { kSumRate = 0, kMaxMinSinr = 1, kPrediction = 2 };
inline constexpr int kNumTasks = 3;

std::string task_name(Task task);   // "P1", "P2", "P3"
Task task_from_name(const std::string& name);

// Raised for invalid arguments, shape mismatches and malformed inputs.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a numeric routine produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace icwlm
