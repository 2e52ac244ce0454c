#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfr/param_set.hpp"

namespace dfr {

// Parameter checkpoint format: <stem>.json manifest (parameter ids, shapes,
// dtype) plus <stem>.bin, a little-endian flat binary of float32 values per
// parameter, concatenated in manifest order.

void save_parameters(const ParameterSet& params, const std::string& stem);

// Loads into an existing set; ids and shapes must match the manifest exactly.
void load_parameters(ParameterSet& params, const std::string& stem);

// The .bin payload as bytes (little-endian f32, iteration order). Used for
// bit-exact comparisons without touching the filesystem.
std::vector<uint8_t> parameter_bytes(const ParameterSet& params);

uint64_t parameter_hash(const ParameterSet& params);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);
uint64_t file_hash(const std::string& path);

}  // namespace dfr
