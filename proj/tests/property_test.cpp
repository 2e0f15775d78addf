#include <doctest.h>

#include <random>

#include "golden.hpp"
#include "ocsc/codec.hpp"
#include "ocsc/mutate.hpp"

using namespace ocsc;

namespace {

IpcMessage random_message(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> byte(0, 255);
    std::uniform_int_distribution<int> tlv_count(0, 5);
    std::uniform_int_distribution<int> value_len(0, 200);
    std::uniform_int_distribution<int> trailer_len(0, 64);

    IpcMessage msg;
    msg.header.msg_type = static_cast<uint8_t>(byte(rng));
    msg.header.msg_id = static_cast<uint8_t>(byte(rng));
    for (auto& b : msg.header.response_handle) b = static_cast<uint8_t>(byte(rng));
    for (auto& b : msg.header.reserved_a) b = static_cast<uint8_t>(byte(rng));
    for (auto& b : msg.header.reserved_b) b = static_cast<uint8_t>(byte(rng));
    for (auto& b : msg.header.return_object) b = static_cast<uint8_t>(byte(rng));

    int n = tlv_count(rng);
    for (int i = 0; i < n; ++i) {
        TlvField tlv;
        tlv.type_code = static_cast<uint16_t>(byte(rng) << 8 | byte(rng));
        int len = value_len(rng);
        tlv.value.reserve(static_cast<size_t>(len));
        for (int j = 0; j < len; ++j) tlv.value.push_back(static_cast<uint8_t>(byte(rng)));
        msg.tlvs.push_back(std::move(tlv));
    }
    // A trailer is only preserved when it does not read as more TLVs; a short
    // odd tail is the common real-world shape.
    int tn = trailer_len(rng) % 3;
    for (int j = 0; j < tn; ++j) msg.trailer.push_back(static_cast<uint8_t>(byte(rng)));
    return msg;
}

}  // namespace

TEST_CASE("property: serialize(parse(x)) is byte identical for 10000 frames") {
    std::mt19937_64 rng(20260826);
    for (int i = 0; i < 10000; ++i) {
        auto msg = random_message(rng);
        auto raw = serialize(msg);
        REQUIRE(raw.ok());
        auto parsed = parse_frame(raw.value());
        REQUIRE(parsed.ok());
        auto again = serialize(parsed.value());
        REQUIRE(again.ok());
        // Structure may legally re-slice (trailer bytes that happen to parse
        // as TLVs), but the bytes must survive exactly.
        REQUIRE(again.value() == raw.value());
    }
}

TEST_CASE("property: parser never crashes and never accepts malformed lengths") {
    std::mt19937_64 rng(424242);
    std::uniform_int_distribution<int> byte(0, 255);
    std::uniform_int_distribution<size_t> len(0, 512);
    auto golden = from_hex(golden::kScriptDeployHex).value();

    for (int i = 0; i < 10000; ++i) {
        Bytes input;
        if (i % 3 == 0) {
            // Arbitrary bytes.
            size_t n = len(rng);
            input.reserve(n);
            for (size_t j = 0; j < n; ++j) input.push_back(static_cast<uint8_t>(byte(rng)));
        } else {
            // Mutated real frame: far more likely to poke edge cases.
            input = havoc(golden, static_cast<uint64_t>(i), 4);
        }
        auto parsed = parse_frame(input);
        if (parsed.ok()) {
            // Anything accepted must re-serialize to the identical bytes.
            auto out = serialize(parsed.value());
            REQUIRE(out.ok());
            REQUIRE(out.value() == input);
        }
    }
}

TEST_CASE("property: greedy TLV slicing loses no bytes") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> byte(0, 255);
    std::uniform_int_distribution<size_t> len(0, 300);
    for (int i = 0; i < 2000; ++i) {
        Bytes body;
        size_t n = len(rng);
        for (size_t j = 0; j < n; ++j) body.push_back(static_cast<uint8_t>(byte(rng)));
        auto [tlvs, trailer] = parse_tlvs(body);
        size_t total = trailer.size();
        for (const auto& t : tlvs) total += t.serialized_size();
        REQUIRE(total == body.size());
    }
}
