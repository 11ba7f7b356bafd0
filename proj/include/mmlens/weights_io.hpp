#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmlens/mat.hpp"

namespace mmlens {

// Binary tensor container: magic "MMDL", version u16, then per-tensor
// records (u32 name length, UTF-8 name, u32 rank, dims as u64, float32
// row-major payload), all little-endian, until end of file.
void save_tensors(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, const Mat*>>& tensors);

std::map<std::string, Mat> load_tensors(const std::filesystem::path& path);

} // namespace mmlens
