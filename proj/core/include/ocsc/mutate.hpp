#ifndef OCSC_MUTATE_HPP
#define OCSC_MUTATE_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ocsc/bytes.hpp"
#include "ocsc/codec.hpp"
#include "ocsc/result.hpp"

namespace ocsc {

enum class MutKind {
    bit_flip,
    byte_set,
    byte_insert,
    byte_delete,
    block_duplicate,
    block_shuffle,
    splice,
    length_field_set,
    tlv_length_set,
    truncate,
    havoc_stack,
};

// One deterministic mutation. Same recipe + same input => same output.
struct MutationRecipe {
    MutKind kind = MutKind::bit_flip;
    uint64_t offset = 0;  // byte position; for tlv_length_set: TLV index
    uint64_t value = 0;   // kind-specific (byte value, field value, length)
    uint64_t count = 1;   // block / insertion / stack size
    uint64_t rng_seed = 0;
};

enum class MutateError {
    EmptyInput,
};

// Output length stays within [1, 4 * input length] for every mutator.
inline constexpr size_t kSizeCapFactor = 4;

Result<Bytes, MutateError> mutate(ByteView input, const MutationRecipe& recipe);

/// Applies stack_depth randomly chosen recipes in sequence. When
/// preserve_magic is set, bytes 0-3 of the output are re-pinned to "OCSC".
Bytes havoc(ByteView input, uint64_t rng_seed, uint32_t stack_depth,
            bool preserve_magic = false);

/// Deterministic, duplicate-free tampering set for a parsed frame: length
/// field overwrites (including the 0x0000 and 0x0006 crash triggers),
/// header_len off-by-ones, per-TLV length variants, truncations at every
/// field boundary, and msg_type/msg_id sweeps.
std::vector<Bytes> structural_candidates(const IpcMessage& msg);

struct SeedEntry {
    Bytes frame;
    std::string origin;
    bool raw = false;  // set when the entry does not parse as a frame
};

struct SeedCorpus {
    std::vector<SeedEntry> entries;

    /// Loads one frame per file, in filename order.
    static SeedCorpus load_dir(const std::filesystem::path& dir);
};

}  // namespace ocsc

#endif
