#pragma once

#include <cstdint>
#include <string>

#include "cpcl/unet.hpp"

namespace cpcl {

// Everything training mutates. Student and teacher share the same name set
// and shapes; momentum buffers mirror the student.
struct ModelState {
    ParamMap student;
    ParamMap teacher;
    ParamMap momentum;
    std::uint64_t step = 0;
    std::uint64_t rng_state = 0;
};

// Initializes student weights from the seed's init substream, copies them
// into the teacher, zeroes momentum, and stamps rng_state with the seed.
ModelState init_model(const UNet& net, std::uint64_t seed);

// Binary format, little-endian:
//   magic "CPCK", u32 version = 1, u64 step, u64 rng_state, u32 section_count
//   section: u8 kind (0 student, 1 teacher, 2 momentum), u32 entry_count
//   entry:   u16 name_len, name bytes, u8 ndim, ndim x u32 dims, f32 payload
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace cpcl
