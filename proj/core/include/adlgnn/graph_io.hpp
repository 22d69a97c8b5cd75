#pragma once

#include <filesystem>
#include <string>

#include "adlgnn/structure.hpp"

namespace adlgnn::structure {

/// N x N row-major CSV, 9 significant digits.
void write_adjacency_csv(const std::filesystem::path& path, const Matrix& weights);
Matrix read_adjacency_csv(const std::filesystem::path& path);

/// Sparse edge list "src<TAB>dst<TAB>weight", one line per nonzero (src = row).
void write_edge_list(const std::filesystem::path& path, const Matrix& weights);
/// Reads an edge list into an N x N matrix. Node ids are 0-based.
Matrix read_edge_list(const std::filesystem::path& path, std::size_t nodes);

std::string report_json(const StaticGraphReport& report, int indent = 2);

}  // namespace adlgnn::structure
