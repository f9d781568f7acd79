#pragma once

#include <string>

#include "gridpipe/table.hpp"

namespace gridpipe {

/// Reads an RFC-4180-style CSV (header row required, quoted fields with
/// embedded separators/newlines supported, "" escapes a quote). Empty cells
/// are missing. A column is numeric when every non-empty cell parses as a
/// finite number, else categorical. The target column is looked up by name
/// and holds class labels (kept as raw strings).
Table load_csv(const std::string& path, const std::string& target_name);

/// Inverse of load_csv for tables that came from it: missing cells become
/// empty fields, numbers are written in shortest round-trip form.
void save_csv(const Table& t, const std::string& path);

}  // namespace gridpipe
