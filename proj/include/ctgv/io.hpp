#pragma once

#include <string>

#include "ctgv/tensor.hpp"

namespace ctgv {

// Raw tensor blob: "CTGVTNSR", u32 version, u32 rank, i64 dims, f64 data,
// everything little-endian. Full double precision so dumped samples compare
// bitwise.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace ctgv
