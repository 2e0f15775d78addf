#include <doctest.h>

#include <fstream>
#include <set>

#include "golden.hpp"
#include "ocsc/mutate.hpp"

using namespace ocsc;

namespace {

Bytes golden_frame() {
    auto raw = from_hex(golden::kScriptDeployHex);
    REQUIRE(raw.has_value());
    return *raw;
}

}  // namespace

TEST_CASE("mutations are deterministic") {
    Bytes input = to_bytes("deterministic input bytes for mutation");
    for (auto kind : {MutKind::bit_flip, MutKind::byte_set, MutKind::byte_insert,
                      MutKind::byte_delete, MutKind::block_duplicate, MutKind::block_shuffle,
                      MutKind::splice, MutKind::truncate, MutKind::havoc_stack}) {
        MutationRecipe recipe{kind, 7, 0x5a, 3, 42};
        auto a = mutate(input, recipe);
        auto b = mutate(input, recipe);
        REQUIRE(a.ok());
        REQUIRE(b.ok());
        CHECK(a.value() == b.value());
    }
}

TEST_CASE("mutations respect the size cap") {
    Bytes input = to_bytes("abcd");
    for (uint64_t seed = 0; seed < 200; ++seed) {
        MutationRecipe recipe{MutKind::block_duplicate, seed % input.size(), 0,
                              1 + seed % 64, seed};
        auto out = mutate(input, recipe);
        REQUIRE(out.ok());
        CHECK(out.value().size() >= 1);
        CHECK(out.value().size() <= input.size() * kSizeCapFactor);
    }
    for (uint64_t seed = 0; seed < 200; ++seed) {
        auto out = havoc(input, seed, 8);
        CHECK(out.size() >= 1);
        CHECK(out.size() <= input.size() * kSizeCapFactor);
    }
}

TEST_CASE("content mutations reject empty input") {
    auto r = mutate(Bytes{}, {MutKind::bit_flip, 0, 0, 1, 0});
    REQUIRE(!r.ok());
    CHECK(r.error() == MutateError::EmptyInput);
}

TEST_CASE("bit_flip flips exactly one bit") {
    Bytes input = to_bytes("AAAA");
    auto out = mutate(input, {MutKind::bit_flip, 2, 3, 1, 0});
    REQUIRE(out.ok());
    REQUIRE(out.value().size() == input.size());
    int diff_bits = 0;
    for (size_t i = 0; i < input.size(); ++i)
        diff_bits += __builtin_popcount(input[i] ^ out.value()[i]);
    CHECK(diff_bits == 1);
}

TEST_CASE("length_field_set writes a u16 LE at the given offset") {
    auto frame = golden_frame();
    auto out = mutate(frame, {MutKind::length_field_set, kBodyLenOffset, 0x0006, 1, 0});
    REQUIRE(out.ok());
    CHECK(out.value()[kBodyLenOffset] == 0x06);
    CHECK(out.value()[kBodyLenOffset + 1] == 0x00);
    // Everything else untouched.
    auto copy = out.value();
    copy[kBodyLenOffset] = frame[kBodyLenOffset];
    copy[kBodyLenOffset + 1] = frame[kBodyLenOffset + 1];
    CHECK(copy == frame);
}

TEST_CASE("tlv_length_set rewrites the nth TLV length in place") {
    auto frame = golden_frame();
    auto out = mutate(frame, {MutKind::tlv_length_set, /*tlv index*/ 1, 147, 1, 0});
    REQUIRE(out.ok());
    CHECK(out.value().size() == frame.size());
    // TLV 1 length field sits at body offset 44+2 => frame offset 38+46.
    CHECK(read_u16be(out.value().data() + 38 + 44 + 2) == 147);
}

TEST_CASE("truncate clamps to at least one byte") {
    Bytes input = to_bytes("0123456789");
    auto out = mutate(input, {MutKind::truncate, 0, 4, 1, 0});
    REQUIRE(out.ok());
    CHECK(out.value() == to_bytes("0123"));
    auto min = mutate(input, {MutKind::truncate, 0, 0, 1, 0});
    REQUIRE(min.ok());
    CHECK(min.value().size() == 1);
}

TEST_CASE("havoc with preserve_magic keeps the magic intact") {
    auto frame = golden_frame();
    for (uint64_t seed = 1; seed <= 100; ++seed) {
        auto out = havoc(frame, seed, 6, /*preserve_magic=*/true);
        REQUIRE(out.size() >= 4);
        CHECK(out[0] == 'O');
        CHECK(out[1] == 'C');
        CHECK(out[2] == 'S');
        CHECK(out[3] == 'C');
    }
}

TEST_CASE("structural_candidates contains the crash-trigger length variants first") {
    auto msg = parse_frame(golden_frame());
    REQUIRE(msg.ok());
    auto cands = structural_candidates(msg.value());
    REQUIRE(cands.size() >= 3);

    auto body_len_of = [](const Bytes& b) { return read_u16le(b.data() + kBodyLenOffset); };
    CHECK(body_len_of(cands[0]) == 0x0000);
    CHECK(body_len_of(cands[1]) == 0x0006);
    CHECK(body_len_of(cands[2]) == 0xffff);
    // The payload behind the shrunken length fields is preserved, so the
    // "declared shorter than carried" shape actually reaches the target.
    CHECK(cands[0].size() == 282);
    CHECK(cands[1].size() == 282);
}

TEST_CASE("structural_candidates is deterministic and duplicate free") {
    auto msg = parse_frame(golden_frame());
    REQUIRE(msg.ok());
    auto a = structural_candidates(msg.value());
    auto b = structural_candidates(msg.value());
    CHECK(a == b);
    std::set<Bytes> unique(a.begin(), a.end());
    CHECK(unique.size() == a.size());
}

TEST_CASE("structural_candidates covers truncations and msg sweeps") {
    auto msg = parse_frame(golden_frame());
    REQUIRE(msg.ok());
    auto cands = structural_candidates(msg.value());

    bool has_header_only_truncation = false;
    bool has_msg_sweep = false;
    for (const auto& c : cands) {
        if (c.size() == IpcHeader::kHeaderSize && read_u16le(c.data() + kBodyLenOffset) == 244)
            has_header_only_truncation = true;
        if (c.size() == 282 && c[kMsgTypeOffset] == 0xff) has_msg_sweep = true;
    }
    CHECK(has_header_only_truncation);
    CHECK(has_msg_sweep);
}

TEST_CASE("seed corpus loads files in name order and flags raw entries") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "ocsc-seeds-test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream a(dir / "b-raw.bin", std::ios::binary);
        a << "not a frame";
    }
    {
        auto frame = golden_frame();
        std::ofstream b(dir / "a-frame.bin", std::ios::binary);
        b.write(reinterpret_cast<const char*>(frame.data()),
                static_cast<std::streamsize>(frame.size()));
    }
    auto corpus = SeedCorpus::load_dir(dir);
    REQUIRE(corpus.entries.size() == 2);
    CHECK(corpus.entries[0].raw == false);
    CHECK(corpus.entries[0].frame.size() == 282);
    CHECK(corpus.entries[1].raw == true);
    fs::remove_all(dir);
}
