#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace bido::dex {

inline constexpr std::size_t kHeaderSize = 112;
inline constexpr std::uint32_t kEndianConstant = 0x12345678;
inline constexpr std::array<std::uint8_t, 4> kMagicPrefix = {0x64, 0x65, 0x78, 0x0A};  // "dex\n"

enum class Section : std::uint8_t { StringIds, TypeIds, ProtoIds, FieldIds, MethodIds, ClassDefs };

inline constexpr std::array<Section, 6> kIndexSections = {Section::StringIds, Section::TypeIds, Section::ProtoIds,
                                                          Section::FieldIds,  Section::MethodIds, Section::ClassDefs};

// Bytes per entry of each index table.
constexpr std::uint32_t entry_width(Section s) {
    switch (s) {
        case Section::StringIds:
        case Section::TypeIds: return 4;
        case Section::ProtoIds: return 12;
        case Section::FieldIds:
        case Section::MethodIds: return 8;
        case Section::ClassDefs: return 32;
    }
    return 0;
}

std::string_view section_name(Section s);

struct SectionRef {
    std::uint32_t size = 0;  // entry count (byte count for data)
    std::uint32_t off = 0;

    bool operator==(const SectionRef&) const = default;
};

struct DexHeader {
    std::array<std::uint8_t, 8> magic{};
    std::uint32_t checksum = 0;
    std::array<std::uint8_t, 20> signature{};
    std::uint32_t file_size = 0;
    std::uint32_t header_size = 0;
    std::uint32_t endian_tag = 0;
    std::uint32_t link_size = 0;
    std::uint32_t link_off = 0;
    std::uint32_t map_off = 0;
    SectionRef string_ids;
    SectionRef type_ids;
    SectionRef proto_ids;
    SectionRef field_ids;
    SectionRef method_ids;
    SectionRef class_defs;
    SectionRef data;

    const SectionRef& section(Section s) const;
    SectionRef& section(Section s);

    bool operator==(const DexHeader&) const = default;
};

struct IndexSpan {
    Section section = Section::StringIds;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;

    bool operator==(const IndexSpan&) const = default;
};

struct IndexBytes {
    std::vector<std::uint8_t> bytes;
    std::vector<IndexSpan> spans;  // offset ascending
};

struct ParseOptions {
    // Verify the adler32 checksum over [12, file_size).
    bool strict = false;
};

// Decodes and validates the 112-byte little-endian header.
// Throws Error{TooShort, BadMagic, OutOfBounds, Overlap}.
DexHeader parse_header(std::span<const std::uint8_t> raw, ParseOptions opts = {});

// The six index tables, sorted by file offset. Ties (e.g. empty tables at
// offset 0) keep the canonical table order.
std::vector<IndexSpan> index_spans(const DexHeader& h);

// Concatenation of the index tables in file-offset order; header and data
// are excluded. Throws Error{OutOfBounds} if raw is shorter than a span.
IndexBytes extract_index_bytes(std::span<const std::uint8_t> raw, const DexHeader& h);

// Serializes the header fields into the first 112 bytes of out.
void write_header(const DexHeader& h, std::span<std::uint8_t> out);

// adler32 over [12, end) as stored in the checksum field.
std::uint32_t compute_checksum(std::span<const std::uint8_t> raw);

}  // namespace bido::dex
