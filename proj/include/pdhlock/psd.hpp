#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pdhlock/errors.hpp"

namespace pdhlock {

/// Single-sided power spectral density on a strictly increasing grid.
struct PsdTrace {
  std::vector<double> freq_hz;
  std::vector<double> values;       // Hz^2/Hz for frequency noise, V^2/Hz for voltages
  double resolution_bandwidth = 0.0;
  std::string label;

  std::size_t size() const { return freq_hz.size(); }

  void validate() const {
    if (values.size() != freq_hz.size()) throw DomainError("PsdTrace: column lengths differ");
    for (std::size_t i = 0; i < freq_hz.size(); ++i) {
      if (!(freq_hz[i] > 0.0)) throw DomainError("PsdTrace: frequencies must be > 0");
      if (i && !(freq_hz[i] > freq_hz[i - 1])) {
        throw DomainError("PsdTrace: frequencies must be strictly increasing");
      }
      if (!(values[i] >= 0.0)) throw DomainError("PsdTrace: values must be >= 0");
    }
  }
};

using PsdFunction = std::function<double(double)>;

}  // namespace pdhlock
