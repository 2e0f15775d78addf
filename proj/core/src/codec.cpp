#include "ocsc/codec.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cstring>

namespace ocsc {

namespace {

bool is_hex(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
    });
}

bool has_forbidden_chars(std::string_view s) {
    return s.find('\t') != std::string_view::npos || s.find('"') != std::string_view::npos;
}

uint32_t read_u32be(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

}  // namespace

const char* to_string(ParseError e) {
    switch (e) {
        case ParseError::TooShort: return "TooShort";
        case ParseError::MagicMismatch: return "MagicMismatch";
        case ParseError::HeaderLenUnsupported: return "HeaderLenUnsupported";
        case ParseError::BodyLenMismatch: return "BodyLenMismatch";
    }
    return "?";
}

bool DeployCommand::valid() const {
    if (mode_flag != '0' && mode_flag != '1') return false;
    if (digest_algo == "sha1") {
        if (digest_hex.size() != 40 || !is_hex(digest_hex)) return false;
    } else if (digest_hex.empty() || !is_hex(digest_hex)) {
        return false;
    }
    return !command.empty();
}

Result<IpcHeader, ParseError> parse_header(ByteView raw) {
    if (raw.size() < IpcHeader::kHeaderSize) return ParseError::TooShort;
    IpcHeader h;
    if (std::memcmp(raw.data(), "OCSC", 4) != 0) return ParseError::MagicMismatch;
    std::copy_n(raw.data(), 4, h.magic.begin());
    h.header_len = read_u16le(raw.data() + kHeaderLenOffset);
    if (h.header_len != IpcHeader::kHeaderSize) return ParseError::HeaderLenUnsupported;
    h.body_len = read_u16le(raw.data() + kBodyLenOffset);
    std::copy_n(raw.data() + 0x08, 8, h.response_handle.begin());
    std::copy_n(raw.data() + 0x10, 8, h.reserved_a.begin());
    std::copy_n(raw.data() + 0x18, 4, h.reserved_b.begin());
    std::copy_n(raw.data() + 0x1c, 8, h.return_object.begin());
    h.msg_type = raw[kMsgTypeOffset];
    h.msg_id = raw[kMsgIdOffset];
    return h;
}

std::pair<std::vector<TlvField>, Bytes> parse_tlvs(ByteView body, const WireProfile& profile) {
    std::vector<TlvField> tlvs;
    const size_t field_width = profile.wide_tlv ? 4 : 2;
    size_t pos = 0;
    while (body.size() - pos >= 2 * field_width) {
        uint32_t type, len;
        if (profile.wide_tlv) {
            type = read_u32be(body.data() + pos);
            len = read_u32be(body.data() + pos + 4);
        } else {
            type = read_u16be(body.data() + pos);
            len = read_u16be(body.data() + pos + 2);
        }
        if (type > 0xffff || len > body.size() - pos - 2 * field_width) break;
        TlvField f;
        f.type_code = static_cast<uint16_t>(type);
        f.value.assign(body.begin() + pos + 2 * field_width,
                       body.begin() + pos + 2 * field_width + len);
        tlvs.push_back(std::move(f));
        pos += 2 * field_width + len;
    }
    return {std::move(tlvs), Bytes(body.begin() + pos, body.end())};
}

Result<IpcMessage, ParseError> parse_frame(ByteView raw, const WireProfile& profile) {
    auto header = parse_header(raw);
    if (!header) return header.error();
    IpcMessage msg;
    msg.header = header.value();
    // Exact-length requirement keeps serialize(parse(b)) == b total.
    if (raw.size() != IpcHeader::kHeaderSize + static_cast<size_t>(msg.header.body_len))
        return ParseError::BodyLenMismatch;
    auto [tlvs, trailer] = parse_tlvs(raw.subspan(IpcHeader::kHeaderSize), profile);
    msg.tlvs = std::move(tlvs);
    msg.trailer = std::move(trailer);
    return msg;
}

Bytes serialize_header(const IpcHeader& header) {
    Bytes out;
    out.reserve(IpcHeader::kHeaderSize);
    out.insert(out.end(), header.magic.begin(), header.magic.end());
    write_u16le(out, header.header_len);
    write_u16le(out, header.body_len);
    out.insert(out.end(), header.response_handle.begin(), header.response_handle.end());
    out.insert(out.end(), header.reserved_a.begin(), header.reserved_a.end());
    out.insert(out.end(), header.reserved_b.begin(), header.reserved_b.end());
    out.insert(out.end(), header.return_object.begin(), header.return_object.end());
    out.push_back(header.msg_type);
    out.push_back(header.msg_id);
    return out;
}

Result<Bytes, SerializeError> serialize(const IpcMessage& msg, const WireProfile& profile) {
    size_t body_size = msg.trailer.size();
    for (const auto& tlv : msg.tlvs)
        body_size += (profile.wide_tlv ? 8 : 4) + tlv.value.size();
    if (body_size > 0xffff) return SerializeError::BodyTooLarge;
    if (!profile.wide_tlv) {
        for (const auto& tlv : msg.tlvs)
            if (tlv.value.size() > 0xffff) return SerializeError::BodyTooLarge;
    }

    IpcHeader header = msg.header;
    header.body_len = static_cast<uint16_t>(body_size);
    Bytes out = serialize_header(header);
    out.reserve(IpcHeader::kHeaderSize + body_size);
    for (const auto& tlv : msg.tlvs) {
        if (profile.wide_tlv) {
            write_u16be(out, 0);
            write_u16be(out, tlv.type_code);
            write_u16be(out, 0);
            write_u16be(out, tlv.length());
        } else {
            write_u16be(out, tlv.type_code);
            write_u16be(out, tlv.length());
        }
        out.insert(out.end(), tlv.value.begin(), tlv.value.end());
    }
    out.insert(out.end(), msg.trailer.begin(), msg.trailer.end());
    return out;
}

std::string render_deploy_command(const DeployCommand& cmd) {
    std::string s;
    s.push_back('"');
    s += cmd.command;
    s += "\t-ipc=" + std::to_string(cmd.reply_port);
    s += "\t" + cmd.src_path;
    s += "\t" + cmd.dst_path;
    s += "\t" + cmd.digest_hex;
    s += "\t" + cmd.digest_algo;
    s += "\t";
    s.push_back(cmd.mode_flag);
    s.push_back('"');
    return s;
}

std::optional<DeployCommand> parse_deploy_command(std::string_view v) {
    if (!v.empty() && v.back() == '\0') v.remove_suffix(1);
    if (v.size() < 2 || v.front() != '"' || v.back() != '"') return std::nullopt;
    v = v.substr(1, v.size() - 2);

    std::vector<std::string_view> fields;
    size_t start = 0;
    for (size_t i = 0; i <= v.size(); ++i) {
        if (i == v.size() || v[i] == '\t') {
            fields.push_back(v.substr(start, i - start));
            start = i + 1;
        }
    }
    if (fields.size() != 7) return std::nullopt;

    DeployCommand cmd;
    cmd.command = std::string(fields[0]);
    std::string_view port = fields[1];
    if (!port.starts_with("-ipc=")) return std::nullopt;
    port.remove_prefix(5);
    unsigned parsed_port = 0;
    auto [p, ec] = std::from_chars(port.data(), port.data() + port.size(), parsed_port);
    if (ec != std::errc{} || p != port.data() + port.size() || parsed_port > 0xffff)
        return std::nullopt;
    cmd.reply_port = static_cast<uint16_t>(parsed_port);
    cmd.src_path = std::string(fields[2]);
    cmd.dst_path = std::string(fields[3]);
    cmd.digest_hex = std::string(fields[4]);
    cmd.digest_algo = std::string(fields[5]);
    if (fields[6].size() != 1) return std::nullopt;
    cmd.mode_flag = fields[6][0];
    if (!cmd.valid()) return std::nullopt;
    return cmd;
}

Result<IpcMessage, BuildError> build_script_move(const DeployCommand& cmd,
                                                 const std::string& target_binary_path) {
    if (!cmd.valid()) return BuildError::InvalidCommand;
    for (const std::string* s : {&cmd.command, &cmd.src_path, &cmd.dst_path, &cmd.digest_algo})
        if (has_forbidden_chars(*s)) return BuildError::InvalidCommand;

    IpcMessage msg;
    // Opaque header fields mirror the captured deployment frame.
    msg.header.response_handle.fill(0xff);
    msg.header.reserved_b = {0x02, 0x00, 0x00, 0x00};
    msg.header.msg_type = 0x01;
    msg.header.msg_id = 0x02;

    TlvField path_tlv;
    path_tlv.type_code = 0x0001;
    path_tlv.value = to_bytes(target_binary_path);
    path_tlv.value.push_back('\0');

    TlvField args_tlv;
    args_tlv.type_code = 0x0002;
    args_tlv.value = to_bytes(render_deploy_command(cmd));
    args_tlv.value.push_back('\0');

    msg.tlvs = {std::move(path_tlv), std::move(args_tlv)};
    return msg;
}

IpcMessage build_disconnect(uint16_t reply_port, const WireProfile& profile) {
    IpcMessage msg;
    msg.header.msg_type = profile.disconnect_msg_type;
    msg.header.msg_id = profile.disconnect_msg_id;
    TlvField port_tlv;
    port_tlv.type_code = 0x0001;
    port_tlv.value = to_bytes("-ipc=" + std::to_string(reply_port));
    port_tlv.value.push_back('\0');
    msg.tlvs = {std::move(port_tlv)};
    return msg;
}

IpcMessage build_progress_status(const std::array<uint8_t, 4>& percent_tlv_value,
                                 const std::string& display_text) {
    IpcMessage msg;
    msg.header.msg_type = 0x01;
    msg.header.msg_id = 0x0d;
    TlvField percent;
    percent.type_code = 0x0001;
    percent.value.assign(percent_tlv_value.begin(), percent_tlv_value.end());
    TlvField text;
    text.type_code = 0x0002;
    text.value = to_bytes(display_text);
    text.value.push_back('\0');
    msg.tlvs = {std::move(percent), std::move(text)};
    return msg;
}

IpcMessage build_noop() {
    return IpcMessage{};
}

Result<std::string, DigestError> compute_digest(ByteView data, const std::string& algo) {
    if (algo != "sha1") return DigestError::UnsupportedAlgo;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int md_len = 0;
    static const uint8_t empty = 0;
    EVP_Digest(data.empty() ? &empty : data.data(), data.size(), md, &md_len, EVP_sha1(),
               nullptr);
    static const char* digits = "0123456789ABCDEF";
    std::string out;
    out.reserve(md_len * 2);
    for (unsigned i = 0; i < md_len; ++i) {
        out.push_back(digits[md[i] >> 4]);
        out.push_back(digits[md[i] & 0xf]);
    }
    return out;
}

}  // namespace ocsc
