#include "bido/dex.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <string>
#include <utility>

#include "bido/error.hpp"

namespace bido::dex {
namespace {

std::uint32_t read_u32(std::span<const std::uint8_t> raw, std::size_t at) {
    return static_cast<std::uint32_t>(raw[at]) | (static_cast<std::uint32_t>(raw[at + 1]) << 8) |
           (static_cast<std::uint32_t>(raw[at + 2]) << 16) | (static_cast<std::uint32_t>(raw[at + 3]) << 24);
}

void write_u32(std::span<std::uint8_t> out, std::size_t at, std::uint32_t v) {
    out[at] = static_cast<std::uint8_t>(v);
    out[at + 1] = static_cast<std::uint8_t>(v >> 8);
    out[at + 2] = static_cast<std::uint8_t>(v >> 16);
    out[at + 3] = static_cast<std::uint8_t>(v >> 24);
}

struct Extent {
    std::string_view name;
    std::uint64_t begin;
    std::uint64_t end;
};

// Field offsets of the (size, off) pairs, starting at string_ids_size.
constexpr std::size_t kSectionTable = 56;

}  // namespace

std::string_view section_name(Section s) {
    switch (s) {
        case Section::StringIds: return "string_ids";
        case Section::TypeIds: return "type_ids";
        case Section::ProtoIds: return "proto_ids";
        case Section::FieldIds: return "field_ids";
        case Section::MethodIds: return "method_ids";
        case Section::ClassDefs: return "class_defs";
    }
    return "?";
}

const SectionRef& DexHeader::section(Section s) const {
    switch (s) {
        case Section::StringIds: return string_ids;
        case Section::TypeIds: return type_ids;
        case Section::ProtoIds: return proto_ids;
        case Section::FieldIds: return field_ids;
        case Section::MethodIds: return method_ids;
        case Section::ClassDefs: return class_defs;
    }
    return data;
}

SectionRef& DexHeader::section(Section s) { return const_cast<SectionRef&>(std::as_const(*this).section(s)); }

std::uint32_t compute_checksum(std::span<const std::uint8_t> raw) {
    if (raw.size() < 12) return 0;
    uLong a = adler32(0L, Z_NULL, 0);
    a = adler32(a, raw.data() + 12, static_cast<uInt>(raw.size() - 12));
    return static_cast<std::uint32_t>(a);
}

DexHeader parse_header(std::span<const std::uint8_t> raw, ParseOptions opts) {
    if (raw.size() < kHeaderSize) {
        throw Error(ErrorCode::TooShort, std::to_string(raw.size()) + " bytes, header needs 112");
    }
    if (!std::equal(kMagicPrefix.begin(), kMagicPrefix.end(), raw.begin())) {
        throw Error(ErrorCode::BadMagic, "missing dex\\n prefix");
    }

    DexHeader h;
    std::copy_n(raw.begin(), 8, h.magic.begin());
    h.checksum = read_u32(raw, 8);
    std::copy_n(raw.begin() + 12, 20, h.signature.begin());
    h.file_size = read_u32(raw, 32);
    h.header_size = read_u32(raw, 36);
    h.endian_tag = read_u32(raw, 40);
    h.link_size = read_u32(raw, 44);
    h.link_off = read_u32(raw, 48);
    h.map_off = read_u32(raw, 52);
    for (std::size_t i = 0; i < kIndexSections.size(); ++i) {
        SectionRef& ref = h.section(kIndexSections[i]);
        ref.size = read_u32(raw, kSectionTable + 8 * i);
        ref.off = read_u32(raw, kSectionTable + 8 * i + 4);
    }
    h.data.size = read_u32(raw, 104);
    h.data.off = read_u32(raw, 108);

    if (h.header_size != kHeaderSize) {
        throw Error(ErrorCode::BadMagic, "header_size " + std::to_string(h.header_size));
    }
    if (h.endian_tag != kEndianConstant) {
        throw Error(ErrorCode::BadMagic, "unsupported endian_tag");
    }
    if (h.file_size < kHeaderSize || h.file_size > raw.size()) {
        throw Error(ErrorCode::OutOfBounds, "file_size " + std::to_string(h.file_size) + " vs " +
                                                std::to_string(raw.size()) + " available");
    }

    std::vector<Extent> extents;
    for (Section s : kIndexSections) {
        const SectionRef& ref = h.section(s);
        if (ref.size == 0) continue;
        const std::uint64_t begin = ref.off;
        const std::uint64_t end = begin + std::uint64_t{ref.size} * entry_width(s);
        if (end > h.file_size) {
            throw Error(ErrorCode::OutOfBounds, std::string(section_name(s)) + " ends past file_size");
        }
        if (begin < kHeaderSize) {
            throw Error(ErrorCode::Overlap, std::string(section_name(s)) + " overlaps the header");
        }
        extents.push_back({section_name(s), begin, end});
    }
    if (h.data.size != 0 && std::uint64_t{h.data.off} + h.data.size > h.file_size) {
        throw Error(ErrorCode::OutOfBounds, "data ends past file_size");
    }

    std::sort(extents.begin(), extents.end(), [](const Extent& a, const Extent& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < extents.size(); ++i) {
        if (extents[i].begin < extents[i - 1].end) {
            throw Error(ErrorCode::Overlap,
                        std::string(extents[i - 1].name) + " and " + std::string(extents[i].name) + " intersect");
        }
    }
    if (h.data.size != 0) {
        const std::uint64_t dbegin = h.data.off;
        const std::uint64_t dend = dbegin + h.data.size;
        for (const Extent& e : extents) {
            if (e.begin < dend && dbegin < e.end) {
                throw Error(ErrorCode::Overlap, std::string(e.name) + " intersects data");
            }
        }
    }

    if (opts.strict && compute_checksum(raw.first(h.file_size)) != h.checksum) {
        throw Error(ErrorCode::BadMagic, "checksum mismatch");
    }
    return h;
}

std::vector<IndexSpan> index_spans(const DexHeader& h) {
    std::vector<IndexSpan> spans;
    spans.reserve(kIndexSections.size());
    for (Section s : kIndexSections) {
        const SectionRef& ref = h.section(s);
        spans.push_back({s, ref.off, std::uint64_t{ref.size} * entry_width(s)});
    }
    std::stable_sort(spans.begin(), spans.end(),
                     [](const IndexSpan& a, const IndexSpan& b) { return a.offset < b.offset; });
    return spans;
}

IndexBytes extract_index_bytes(std::span<const std::uint8_t> raw, const DexHeader& h) {
    IndexBytes out;
    out.spans = index_spans(h);
    std::uint64_t total = 0;
    for (const IndexSpan& s : out.spans) {
        if (s.length != 0 && s.offset + s.length > raw.size()) {
            throw Error(ErrorCode::OutOfBounds, std::string(section_name(s.section)) + " past end of input");
        }
        total += s.length;
    }
    out.bytes.reserve(total);
    for (const IndexSpan& s : out.spans) {
        if (s.length == 0) continue;
        auto first = raw.begin() + static_cast<std::ptrdiff_t>(s.offset);
        out.bytes.insert(out.bytes.end(), first, first + static_cast<std::ptrdiff_t>(s.length));
    }
    return out;
}

void write_header(const DexHeader& h, std::span<std::uint8_t> out) {
    if (out.size() < kHeaderSize) throw Error(ErrorCode::TooShort, "header buffer");
    std::copy(h.magic.begin(), h.magic.end(), out.begin());
    write_u32(out, 8, h.checksum);
    std::copy(h.signature.begin(), h.signature.end(), out.begin() + 12);
    write_u32(out, 32, h.file_size);
    write_u32(out, 36, h.header_size);
    write_u32(out, 40, h.endian_tag);
    write_u32(out, 44, h.link_size);
    write_u32(out, 48, h.link_off);
    write_u32(out, 52, h.map_off);
    for (std::size_t i = 0; i < kIndexSections.size(); ++i) {
        const SectionRef& ref = h.section(kIndexSections[i]);
        write_u32(out, kSectionTable + 8 * i, ref.size);
        write_u32(out, kSectionTable + 8 * i + 4, ref.off);
    }
    write_u32(out, 104, h.data.size);
    write_u32(out, 108, h.data.off);
}

}  // namespace bido::dex
