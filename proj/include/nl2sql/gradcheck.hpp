#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nl2sql {

struct GradCheckCase {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t coordinates = 0;
  double max_error = 0.0;
  std::string detail;  // worst coordinate
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double tolerance = 0.0;
  double max_error = 0.0;
  std::string worst_case;
  std::size_t seeds = 0;
  double seconds = 0.0;

  bool passed() const { return !cases.empty() && max_error < tolerance; }
  std::string summary() const;
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t seeds = 10;
  double tolerance = 1e-4;
  double eps = 1e-5;
  // Relative errors divide by max(|analytic|, |numeric|, floor).
  double floor = 1e-5;
  // Coordinates probed per tensor; smaller tensors are checked fully.
  std::size_t coordinates_per_tensor = 4;
};

/// Reverse-mode gradients against central differences for every tensor op,
/// the recurrent cells, bi-attention, the character CNN and the pointer
/// layer, and for the full training loss of a tiny model.
GradCheckReport run_gradient_suite(const GradCheckOptions& options = {});

}  // namespace nl2sql
