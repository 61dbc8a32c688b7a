#pragma once

// Little-endian binary file helpers shared by the checkpoint and index
// formats, plus the FNV-1a fingerprint used to tie indexes to checkpoints.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "calm/tensor.hpp"

namespace calm {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_f64_array(std::ostream& os, const std::vector<double>& v);
void write_bytes(std::ostream& os, const void* p, std::size_t n);

// Readers throw ErrCode::io on short reads.
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
void read_f64_array(std::istream& is, std::vector<double>& v, std::size_t n);
void read_bytes(std::istream& is, void* p, std::size_t n);

std::uint64_t fnv1a64(const void* p, std::size_t n);
std::uint64_t fnv1a64_file(const std::string& path);  // throws io if unreadable

std::string fingerprint_hex(std::uint64_t fp);

}  // namespace calm
