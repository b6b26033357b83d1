#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pdeformer/tensor.hpp"

namespace pdeformer {

// Formats a double so it parses back exactly ("%.17g").
std::string format_double(double v);

// Header row plus rows of %.17g-formatted cells; every row must match the
// header width.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

// Like write_csv but with a leading string cell per row (a label column).
void write_csv_labeled(const std::string& path, const std::vector<std::string>& header,
                       const std::vector<std::pair<std::string, std::vector<double>>>& rows);

// Binary 8-bit PGM (P5) heatmap of a 2-D tensor, min-max scaled; a constant
// matrix renders mid-gray.
void write_pgm(const std::string& path, const Tensor& m);

}  // namespace pdeformer
