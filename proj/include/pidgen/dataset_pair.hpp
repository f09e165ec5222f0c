#pragma once

#include "pidgen/sfiles.hpp"

namespace pidgen {

/// Training example: flowsheet without control structure (input) and with it (target).
struct DatasetPair {
  int id = 0;
  SfilesString pfd_sfiles;
  SfilesString pid_sfiles;

  friend bool operator==(const DatasetPair&, const DatasetPair&) = default;
};

}  // namespace pidgen
