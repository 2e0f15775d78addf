#include "ocsc/mutate.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

namespace ocsc {

namespace {

bool needs_content(MutKind k) {
    switch (k) {
        case MutKind::byte_insert:
        case MutKind::havoc_stack:
            return false;
        default:
            return true;
    }
}

void clamp_size(Bytes& out, size_t original_len) {
    size_t cap = std::max<size_t>(1, original_len * kSizeCapFactor);
    if (out.size() > cap) out.resize(cap);
    if (out.empty()) out.push_back(0);
}

Bytes apply_recipe(ByteView input, const MutationRecipe& r) {
    Bytes out(input.begin(), input.end());
    const size_t n = out.size();
    std::mt19937_64 rng(r.rng_seed);
    switch (r.kind) {
        case MutKind::bit_flip:
            out[r.offset % n] ^= static_cast<uint8_t>(1u << (r.value % 8));
            break;
        case MutKind::byte_set:
            out[r.offset % n] = static_cast<uint8_t>(r.value);
            break;
        case MutKind::byte_insert: {
            size_t pos = r.offset % (n + 1);
            Bytes fill(std::max<uint64_t>(1, r.count));
            for (auto& b : fill) b = static_cast<uint8_t>(rng());
            out.insert(out.begin() + pos, fill.begin(), fill.end());
            break;
        }
        case MutKind::byte_delete: {
            size_t pos = r.offset % n;
            size_t cnt = std::min<size_t>(std::max<uint64_t>(1, r.count), n - pos);
            if (cnt >= n) cnt = n - 1;  // keep at least one byte
            out.erase(out.begin() + pos, out.begin() + pos + cnt);
            break;
        }
        case MutKind::block_duplicate: {
            size_t pos = r.offset % n;
            size_t cnt = std::min<size_t>(std::max<uint64_t>(1, r.count), n - pos);
            Bytes block(out.begin() + pos, out.begin() + pos + cnt);
            out.insert(out.begin() + pos + cnt, block.begin(), block.end());
            break;
        }
        case MutKind::block_shuffle: {
            size_t pos = r.offset % n;
            size_t cnt = std::min<size_t>(std::max<uint64_t>(1, r.count), n - pos);
            std::shuffle(out.begin() + pos, out.begin() + pos + cnt, rng);
            break;
        }
        case MutKind::splice: {
            // Self-splice: copy a block from elsewhere in the input.
            size_t dst = r.offset % n;
            size_t src = r.value % n;
            size_t cnt = std::min<size_t>(std::max<uint64_t>(1, r.count),
                                          std::min(n - dst, n - src));
            std::copy_n(input.begin() + src, cnt, out.begin() + dst);
            break;
        }
        case MutKind::length_field_set: {
            size_t pos = r.offset;
            if (pos + 2 <= n) {
                out[pos] = static_cast<uint8_t>(r.value & 0xff);
                out[pos + 1] = static_cast<uint8_t>((r.value >> 8) & 0xff);
            }
            break;
        }
        case MutKind::tlv_length_set: {
            // Overwrite the length field of TLV #offset in place, leaving
            // the rest of the frame stale on purpose.
            auto parsed = parse_frame(input);
            if (!parsed) break;
            size_t pos = IpcHeader::kHeaderSize;
            for (size_t i = 0; i < parsed.value().tlvs.size(); ++i) {
                if (i == r.offset) {
                    out[pos + 2] = static_cast<uint8_t>((r.value >> 8) & 0xff);
                    out[pos + 3] = static_cast<uint8_t>(r.value & 0xff);
                    break;
                }
                pos += parsed.value().tlvs[i].serialized_size();
            }
            break;
        }
        case MutKind::truncate: {
            size_t keep = std::clamp<size_t>(r.value, 1, n);
            out.resize(keep);
            break;
        }
        case MutKind::havoc_stack:
            return havoc(input, r.rng_seed, static_cast<uint32_t>(std::max<uint64_t>(1, r.count)));
    }
    clamp_size(out, input.size());
    return out;
}

}  // namespace

Result<Bytes, MutateError> mutate(ByteView input, const MutationRecipe& recipe) {
    if (input.empty() && needs_content(recipe.kind)) return MutateError::EmptyInput;
    return apply_recipe(input, recipe);
}

Bytes havoc(ByteView input, uint64_t rng_seed, uint32_t stack_depth, bool preserve_magic) {
    std::mt19937_64 rng(rng_seed);
    Bytes cur(input.begin(), input.end());
    const size_t original_len = std::max<size_t>(1, input.size());
    static constexpr MutKind kHavocKinds[] = {
        MutKind::bit_flip,      MutKind::byte_set,      MutKind::byte_insert,
        MutKind::byte_delete,   MutKind::block_duplicate, MutKind::block_shuffle,
        MutKind::splice,        MutKind::length_field_set, MutKind::tlv_length_set,
        MutKind::truncate,
    };
    for (uint32_t i = 0; i < stack_depth; ++i) {
        MutationRecipe r;
        r.kind = kHavocKinds[rng() % std::size(kHavocKinds)];
        r.offset = rng();
        r.value = rng();
        r.count = 1 + rng() % 16;
        r.rng_seed = rng();
        if (r.kind == MutKind::length_field_set)
            r.offset = (rng() % 2) ? kHeaderLenOffset : kBodyLenOffset;
        if (cur.empty() && needs_content(r.kind)) continue;
        cur = apply_recipe(cur, r);
        clamp_size(cur, original_len);
    }
    if (preserve_magic && cur.size() >= 4) {
        cur[0] = 'O';
        cur[1] = 'C';
        cur[2] = 'S';
        cur[3] = 'C';
    }
    return cur;
}

std::vector<Bytes> structural_candidates(const IpcMessage& msg) {
    auto base_r = serialize(msg);
    if (!base_r) return {};
    const Bytes base = std::move(base_r).value();

    std::vector<Bytes> out;
    std::set<Bytes> seen;
    auto emit = [&](Bytes b) {
        if (seen.insert(b).second) out.push_back(std::move(b));
    };
    auto patched_u16le = [&](size_t pos, uint16_t v) {
        Bytes b = base;
        b[pos] = static_cast<uint8_t>(v & 0xff);
        b[pos + 1] = static_cast<uint8_t>(v >> 8);
        return b;
    };

    // Length-field overwrites first, so the known crash triggers come early.
    for (uint16_t v : {uint16_t{0x0000}, uint16_t{0x0006}, uint16_t{0xffff}})
        emit(patched_u16le(kBodyLenOffset, v));
    uint16_t hlen = read_u16le(base.data() + kHeaderLenOffset);
    emit(patched_u16le(kHeaderLenOffset, static_cast<uint16_t>(hlen + 1)));
    emit(patched_u16le(kHeaderLenOffset, static_cast<uint16_t>(hlen - 1)));

    // Per-TLV length variants, written big-endian in place.
    size_t pos = IpcHeader::kHeaderSize;
    std::vector<size_t> boundaries = {4,    kHeaderLenOffset + 2, kBodyLenOffset + 2,
                                      0x10, 0x18,                0x1c,
                                      0x24, kMsgTypeOffset + 1,  IpcHeader::kHeaderSize};
    for (const auto& tlv : msg.tlvs) {
        uint16_t len = tlv.length();
        for (uint16_t v : {static_cast<uint16_t>(len + 1), static_cast<uint16_t>(len - 1),
                           uint16_t{0}}) {
            Bytes b = base;
            b[pos + 2] = static_cast<uint8_t>(v >> 8);
            b[pos + 3] = static_cast<uint8_t>(v & 0xff);
            emit(std::move(b));
        }
        boundaries.push_back(pos + 2);                      // after type
        boundaries.push_back(pos + 4);                      // after length
        boundaries.push_back(pos + tlv.serialized_size());  // after value
        pos += tlv.serialized_size();
    }
    if (!msg.trailer.empty()) boundaries.push_back(base.size());

    // Truncations at every field boundary.
    for (size_t cut : boundaries)
        if (cut > 0 && cut < base.size()) emit(Bytes(base.begin(), base.begin() + cut));

    // msg_type / msg_id sweep; the "random" id is pinned per-frame so the
    // whole candidate set stays deterministic.
    uint8_t random_id = static_cast<uint8_t>(fnv1a(base) % 0xfb + 2);
    if (random_id == 0x0d) random_id++;
    for (uint8_t type : {0x00, 0x01, 0x0d, 0x7f, 0xff}) {
        for (uint8_t id : {uint8_t{0x00}, uint8_t{0x0d}, random_id}) {
            Bytes b = base;
            b[kMsgTypeOffset] = type;
            b[kMsgIdOffset] = id;
            emit(std::move(b));
        }
    }
    return out;
}

SeedCorpus SeedCorpus::load_dir(const std::filesystem::path& dir) {
    SeedCorpus corpus;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        SeedEntry entry;
        entry.raw = !parse_frame(data).ok();
        entry.frame = std::move(data);
        entry.origin = f.filename().string();
        corpus.entries.push_back(std::move(entry));
    }
    return corpus;
}

}  // namespace ocsc
