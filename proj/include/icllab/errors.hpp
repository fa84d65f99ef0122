// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace icllab {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ICLLAB_DECLARE_ERROR(Name)    \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  }

// ndiff
ICLLAB_DECLARE_ERROR(ShapeError);
ICLLAB_DECLARE_ERROR(MaskError);
ICLLAB_DECLARE_ERROR(GradError);
ICLLAB_DECLARE_ERROR(NonFiniteError);

// taskgen
ICLLAB_DECLARE_ERROR(DegenerateDimension);

// models
ICLLAB_DECLARE_ERROR(LayoutError);
ICLLAB_DECLARE_ERROR(LengthError);

// closed-form attacks
ICLLAB_DECLARE_ERROR(DegenerateDirection);
ICLLAB_DECLARE_ERROR(StructureError);
ICLLAB_DECLARE_ERROR(ZeroLabel);

// gradient attacks / OLS
ICLLAB_DECLARE_ERROR(BudgetError);
ICLLAB_DECLARE_ERROR(IllConditioned);

// evaluation
ICLLAB_DECLARE_ERROR(EmptyError);

// persistence
ICLLAB_DECLARE_ERROR(FormatError);

#undef ICLLAB_DECLARE_ERROR

/// Training blew up. Carries the loss trace recorded up to the failure.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<double> trace)
      : Error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

}  // namespace icllab
