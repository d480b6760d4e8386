#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lapddpm/tensor.hpp"

namespace lapddpm::io {

// Container layout shared by the processed cache and checkpoints:
// magic (8 bytes) | u64 LE header length | JSON header | concatenated blobs.
// The header carries a "tensors" manifest (name, rows, cols, offset, dtype)
// describing the blob section. Offsets are relative to the blob start.
struct TensorBlob {
    std::string name;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::string dtype;  // "f32" | "f64"
    std::vector<std::uint8_t> bytes;
};

struct Container {
    std::string magic;  // exactly 8 bytes
    nlohmann::json header;
    std::vector<TensorBlob> tensors;
};

void write_container(const std::filesystem::path& file, const Container& c);
Container read_container(const std::filesystem::path& file, const std::string& expected_magic);

// Row-major encode/decode between Eigen matrices and blob bytes.
TensorBlob encode_f64(const std::string& name, const Mat& m);
TensorBlob encode_f32(const std::string& name, const Mat& m);
Mat decode_matrix(const TensorBlob& b);

// Text helpers.
std::vector<std::string> read_lines(const std::filesystem::path& file);
void write_lines(const std::filesystem::path& file, const std::vector<std::string>& lines);
std::string read_file(const std::filesystem::path& file);
void write_file(const std::filesystem::path& file, const std::string& contents);

// FNV-1a 64-bit hash of a file's bytes, as a hex string.
std::string fnv1a_hex(const std::filesystem::path& file);

}  // namespace lapddpm::io
