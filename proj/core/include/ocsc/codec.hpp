#ifndef OCSC_CODEC_HPP
#define OCSC_CODEC_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ocsc/bytes.hpp"
#include "ocsc/result.hpp"

namespace ocsc {

// Fixed OCSC frame header, 38 bytes on the wire.
//
//   00-03  magic "OCSC"
//   04-05  header length (u16 LE), 0x26 under profile v1
//   06-07  body length (u16 LE)
//   08-0f  response handle (opaque)
//   10-17  reserved A (opaque)
//   18-1b  reserved B (opaque)
//   1c-23  return object (opaque)
//   24     message type
//   25     message identifier
//
// The opaque fields carry pointer-like values on the original system; they
// are preserved verbatim and never interpreted.
struct IpcHeader {
    std::array<uint8_t, 4> magic{{'O', 'C', 'S', 'C'}};
    uint16_t header_len = kHeaderSize;
    uint16_t body_len = 0;
    std::array<uint8_t, 8> response_handle{};
    std::array<uint8_t, 8> reserved_a{};
    std::array<uint8_t, 4> reserved_b{};
    std::array<uint8_t, 8> return_object{};
    uint8_t msg_type = 0;
    uint8_t msg_id = 0;

    static constexpr uint16_t kHeaderSize = 0x26;

    bool operator==(const IpcHeader&) const = default;
};

// Byte offsets of the two length fields, as used by length-field mutators.
inline constexpr size_t kHeaderLenOffset = 4;
inline constexpr size_t kBodyLenOffset = 6;
inline constexpr size_t kMsgTypeOffset = 0x24;
inline constexpr size_t kMsgIdOffset = 0x25;

struct TlvField {
    uint16_t type_code = 0;
    Bytes value;

    uint16_t length() const { return static_cast<uint16_t>(value.size()); }
    size_t serialized_size() const { return 4 + value.size(); }

    bool operator==(const TlvField&) const = default;
};

struct IpcMessage {
    IpcHeader header;
    std::vector<TlvField> tlvs;
    Bytes trailer;

    bool operator==(const IpcMessage&) const = default;
};

// Parsed CAC-move argument vector (TLV type 0x0002 payload).
struct DeployCommand {
    std::string command = "CAC-move";
    uint16_t reply_port = 0;
    std::string src_path;
    std::string dst_path;
    std::string digest_hex;
    std::string digest_algo = "sha1";
    char mode_flag = '1';

    bool valid() const;
};

// Knobs for the parts of the wire format the captures leave ambiguous.
struct WireProfile {
    // Table reading of the TLV sub-format is 4-byte type/length fields; the
    // captured frame only decodes with 2-byte fields, so that is the default.
    bool wide_tlv = false;
    uint8_t disconnect_msg_type = 0x03;
    uint8_t disconnect_msg_id = 0x01;
};

enum class ParseError {
    TooShort,
    MagicMismatch,
    HeaderLenUnsupported,
    BodyLenMismatch,
};

enum class SerializeError {
    BodyTooLarge,
};

enum class BuildError {
    InvalidCommand,
};

enum class DigestError {
    UnsupportedAlgo,
};

const char* to_string(ParseError e);

/// Parses just the 38-byte header. Fails with the same errors as parse_frame
/// except that body_len is not checked against anything.
Result<IpcHeader, ParseError> parse_header(ByteView raw);

/// Greedy left-to-right TLV parse of a message body. Bytes from the first
/// position where a well-formed TLV cannot be read become the trailer, so no
/// input is ever rejected and no byte is lost.
std::pair<std::vector<TlvField>, Bytes> parse_tlvs(ByteView body,
                                                   const WireProfile& profile = {});

/// Parses a complete frame. Accepts only when raw is exactly header +
/// declared body, so re-serialization is byte-identical to the input.
Result<IpcMessage, ParseError> parse_frame(ByteView raw,
                                           const WireProfile& profile = {});

/// Emits header (body_len recomputed from content), TLVs in order, trailer.
Result<Bytes, SerializeError> serialize(const IpcMessage& msg,
                                        const WireProfile& profile = {});

Bytes serialize_header(const IpcHeader& header);

/// CAC-move deployment request: TLV 0x0001 = target binary path + NUL,
/// TLV 0x0002 = quoted, TAB-separated argument vector + NUL.
Result<IpcMessage, BuildError> build_script_move(const DeployCommand& cmd,
                                                 const std::string& target_binary_path);

/// Session disconnect trigger. The real encoding is unknown; type/id come
/// from the wire profile.
IpcMessage build_disconnect(uint16_t reply_port, const WireProfile& profile = {});

/// Download-progress status frame: a 4-byte first TLV places the display
/// string's TLV header at absolute frame offset 0x2e.
IpcMessage build_progress_status(const std::array<uint8_t, 4>& percent_tlv_value,
                                 const std::string& display_text);

/// Well-formed empty frame with msg_type 0 / msg_id 0; safe as a liveness
/// probe because it is never dispatched.
IpcMessage build_noop();

/// Renders the quoted TAB-separated argument string carried in TLV 0x0002
/// (without the trailing NUL).
std::string render_deploy_command(const DeployCommand& cmd);

/// Inverse of render_deploy_command; accepts the raw TLV value with or
/// without the trailing NUL.
std::optional<DeployCommand> parse_deploy_command(std::string_view tlv_value);

/// Uppercase hex digest. Only sha1 is supported.
Result<std::string, DigestError> compute_digest(ByteView data, const std::string& algo);

}  // namespace ocsc

#endif
