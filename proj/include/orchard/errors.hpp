#pragma once

#include <stdexcept>
#include <string>

namespace orchard {

struct InvalidInput : std::runtime_error {
  explicit InvalidInput(const std::string& what) : std::runtime_error(what) {}
};

// Thrown by fit_color_model when the corpus has fewer distinct superpixel
// colors than requested classes. Carries the achievable count.
struct FewerClasses : std::runtime_error {
  FewerClasses(const std::string& what, int actual)
      : std::runtime_error(what), actual_classes(actual) {}
  int actual_classes;
};

struct IncompatibleWeights : std::runtime_error {
  explicit IncompatibleWeights(const std::string& what) : std::runtime_error(what) {}
};

struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

struct InsufficientData : std::runtime_error {
  explicit InsufficientData(const std::string& what) : std::runtime_error(what) {}
};

struct UnbalanceableClass : std::runtime_error {
  UnbalanceableClass(const std::string& what, int label)
      : std::runtime_error(what), count_label(label) {}
  int count_label;
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace orchard
