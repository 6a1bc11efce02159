#pragma once

#include <stdexcept>
#include <string>

namespace iwgae {

// Input files or in-memory data violating the documented schemas.
// The CLI maps this to exit code 2.
struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingFeaturesError : SchemaError {
  explicit MissingFeaturesError(const std::string& msg) : SchemaError(msg) {}
};

struct MissingLabelsError : SchemaError {
  explicit MissingLabelsError(const std::string& msg) : SchemaError(msg) {}
};

struct LengthMismatchError : SchemaError {
  explicit LengthMismatchError(const std::string& msg) : SchemaError(msg) {}
};

// Numerical/pipeline failures. The CLI maps this to exit code 3.
struct PipelineError : std::runtime_error {
  explicit PipelineError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateError : PipelineError {
  explicit DegenerateError(const std::string& msg) : PipelineError(msg) {}
};

struct InvalidCountError : PipelineError {
  explicit InvalidCountError(const std::string& msg) : PipelineError(msg) {}
};

struct EmptyGroupError : PipelineError {
  explicit EmptyGroupError(const std::string& msg) : PipelineError(msg) {}
};

struct NoEligibleGroupsError : PipelineError {
  explicit NoEligibleGroupsError(const std::string& msg) : PipelineError(msg) {}
};

}  // namespace iwgae
