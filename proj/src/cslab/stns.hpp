#pragma once

#include <filesystem>
#include <iosfwd>

#include "cslab/tensor.hpp"

namespace cslab {

// STNS binary tensor file:
//   magic "STNS" | version byte (1) | rank u8 | dims u32 LE each | f64 LE payload
// Round-trips doubles bit-exactly.

void stns_write(std::ostream& out, const Tensor& t);
Tensor stns_read(std::istream& in);

void stns_save(const std::filesystem::path& path, const Tensor& t);
Tensor stns_load(const std::filesystem::path& path);

}  // namespace cslab
