#include "bido/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bido/convert.hpp"
#include "bido/error.hpp"
#include "bido/io.hpp"
#include "bido/parallel.hpp"
#include "bido/rng.hpp"

namespace bido::synth {
namespace {

using dex::Section;

constexpr std::uint32_t kMaxEntries = 65535;
constexpr std::uint32_t kMaxManifestItems = 4096;
constexpr std::size_t kMethodMotifs = 16;
constexpr std::size_t kClassMotifs = 8;

void put_u16(std::vector<std::uint8_t>& out, std::size_t at, std::uint32_t v) {
    out[at] = static_cast<std::uint8_t>(v);
    out[at + 1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(std::vector<std::uint8_t>& out, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
    return static_cast<std::uint32_t>(in[at]) | static_cast<std::uint32_t>(in[at + 1]) << 8 |
           static_cast<std::uint32_t>(in[at + 2]) << 16 | static_cast<std::uint32_t>(in[at + 3]) << 24;
}

void append_uleb128(std::vector<std::uint8_t>& out, std::uint32_t v) {
    do {
        std::uint8_t b = v & 0x7F;
        v >>= 7;
        if (v != 0) b |= 0x80;
        out.push_back(b);
    } while (v != 0);
}

// Returns false when the encoding runs past the buffer.
bool read_uleb128(std::span<const std::uint8_t> in, std::size_t& at, std::uint32_t& v) {
    v = 0;
    for (int shift = 0; shift < 35; shift += 7) {
        if (at >= in.size()) return false;
        const std::uint8_t b = in[at++];
        v |= static_cast<std::uint32_t>(b & 0x7F) << shift;
        if ((b & 0x80) == 0) return true;
    }
    return false;
}

enum class Pool { Benign, Malicious, Evolved };

std::uint64_t pool_seed(Pool p) {
    switch (p) {
        case Pool::Benign: return 0xB1D0'0000'0000'0001ULL;
        case Pool::Malicious: return 0xB1D0'0000'0000'0002ULL;
        case Pool::Evolved: return 0xB1D0'0000'0000'0003ULL;
    }
    return 0;
}

// Disjoint byte ranges keep the three pools separable and make drift a pure
// transfer of histogram mass.
std::uint8_t pool_byte(Pool p, Rng& rng) {
    const std::uint8_t lo = p == Pool::Benign ? 0x40 : (p == Pool::Malicious ? 0xC0 : 0x80);
    return static_cast<std::uint8_t>(lo + (rng.byte() & 0x3F));
}

std::array<std::uint8_t, 8> method_motif(Pool p, std::size_t j) {
    Rng rng(Rng::derive(pool_seed(p), j));
    std::array<std::uint8_t, 8> m{};
    for (auto& b : m) b = pool_byte(p, rng);
    return m;
}

// Offset-valued fields stay zero so relocation never rewrites a motif.
std::array<std::uint8_t, 32> class_motif(Pool p, std::size_t j) {
    Rng rng(Rng::derive(pool_seed(p), 1000 + j));
    std::array<std::uint8_t, 32> m{};
    for (std::size_t i = 0; i < 12; ++i) m[i] = pool_byte(p, rng);
    for (std::size_t i = 16; i < 20; ++i) m[i] = pool_byte(p, rng);
    return m;
}

const std::vector<std::string>& identifier_words() {
    static const std::vector<std::string> words = {
        "app",    "core",    "util",   "view",   "model",  "data",    "net",     "cache",  "image",  "user",
        "login",  "widget",  "list",   "item",   "helper", "service", "manager", "base",   "event",  "config",
        "player", "media",   "store",  "sync",   "task",   "worker",  "impl",    "holder", "parser", "adapter",
        "result", "request", "client", "server", "page",   "layout",  "draw",    "font",   "color",  "theme"};
    return words;
}

std::string random_identifier(Rng& rng) {
    const auto& words = identifier_words();
    std::string s;
    switch (rng.below(4)) {
        case 0: {
            s = "Lcom/" + words[rng.below(words.size())] + "/" + words[rng.below(words.size())] + ";";
            break;
        }
        case 1: {
            s = words[rng.below(words.size())];
            s += words[rng.below(words.size())];
            break;
        }
        case 2: {
            s = "get";
            std::string w = words[rng.below(words.size())];
            w[0] = static_cast<char>(w[0] - 'a' + 'A');
            s += w;
            break;
        }
        default: {
            static const char* shorties[] = {"V", "VL", "LL", "ZL", "IL", "VLL", "JI", "Z"};
            s = shorties[rng.below(8)];
            break;
        }
    }
    return s;
}

void append_string_item(std::vector<std::uint8_t>& data, const std::string& s) {
    append_uleb128(data, static_cast<std::uint32_t>(s.size()));
    data.insert(data.end(), s.begin(), s.end());
    data.push_back(0);
}

void align4(std::vector<std::uint8_t>& data) {
    while (data.size() % 4 != 0) data.push_back(0);
}

std::uint32_t below_or_zero(Rng& rng, std::uint32_t n) { return n == 0 ? 0 : static_cast<std::uint32_t>(rng.below(n)); }

struct Honest {
    std::uint32_t strings, types, protos;
};

void honest_method(std::vector<std::uint8_t>& t, std::size_t at, Rng& rng, Honest c) {
    put_u16(t, at, below_or_zero(rng, c.types));
    put_u16(t, at + 2, below_or_zero(rng, c.protos));
    put_u32(t, at + 4, below_or_zero(rng, c.strings));
}

void honest_field(std::vector<std::uint8_t>& t, std::size_t at, Rng& rng, Honest c) {
    put_u16(t, at, below_or_zero(rng, c.types));
    put_u16(t, at + 2, below_or_zero(rng, c.types));
    put_u32(t, at + 4, below_or_zero(rng, c.strings));
}

void honest_class(std::vector<std::uint8_t>& t, std::size_t at, Rng& rng, Honest c, std::uint32_t class_data_off) {
    put_u32(t, at, below_or_zero(rng, c.types));
    put_u32(t, at + 4, rng.bernoulli(0.7) ? 0x1 : 0x11);
    put_u32(t, at + 8, below_or_zero(rng, c.types));
    put_u32(t, at + 12, 0);
    put_u32(t, at + 16, below_or_zero(rng, c.strings));
    put_u32(t, at + 20, 0);
    put_u32(t, at + 24, class_data_off);
    put_u32(t, at + 28, 0);
}

void honest_proto(std::vector<std::uint8_t>& t, std::size_t at, Rng& rng, Honest c, std::uint32_t params_off) {
    put_u32(t, at, below_or_zero(rng, c.strings));
    put_u32(t, at + 4, below_or_zero(rng, c.types));
    put_u32(t, at + 8, params_off);
}

template <std::size_t N>
void put_motif(std::vector<std::uint8_t>& t, std::size_t at, const std::array<std::uint8_t, N>& m) {
    std::copy(m.begin(), m.end(), t.begin() + static_cast<std::ptrdiff_t>(at));
}

Pool sample_pool(const SampleSpec& spec) {
    return spec.label == Label::Malicious && spec.dex_signal ? Pool::Malicious : Pool::Benign;
}

// Relocates every stored absolute data offset by delta.
void relocate(DexContent& c, std::int64_t delta) {
    if (delta == 0) return;
    auto shift = [delta](std::vector<std::uint8_t>& t, std::size_t at, bool zero_is_null) {
        const std::uint32_t v = get_u32(t, at);
        if (zero_is_null && v == 0) return;
        put_u32(t, at, static_cast<std::uint32_t>(static_cast<std::int64_t>(v) + delta));
    };
    auto& strings = c.table(Section::StringIds);
    for (std::size_t at = 0; at + 4 <= strings.size(); at += 4) shift(strings, at, false);
    auto& protos = c.table(Section::ProtoIds);
    for (std::size_t at = 0; at + 12 <= protos.size(); at += 12) shift(protos, at + 8, true);
    auto& classes = c.table(Section::ClassDefs);
    for (std::size_t at = 0; at + 32 <= classes.size(); at += 32) {
        for (std::size_t f : {12u, 20u, 24u, 28u}) shift(classes, at + f, true);
    }
}

// Entry insertion at random positions, honest-looking content.
void apply(DexContent& c, const JunkInsertion& j) {
    if (!(j.rate >= 0.0) || !std::isfinite(j.rate)) throw Error(ErrorCode::BadConfig, "junk rate must be >= 0");
    Rng rng(Rng::derive(j.seed, 0x4A554E4B));
    const Honest counts{c.count(Section::StringIds), c.count(Section::TypeIds), c.count(Section::ProtoIds)};
    for (Section s : dex::kIndexSections) {
        const std::uint32_t n = c.count(s);
        if (n == 0 || j.rate == 0.0) continue;
        const auto extra = static_cast<std::uint32_t>(std::max(1.0, std::round(j.rate * n)));
        if (static_cast<std::uint64_t>(n) + extra > kMaxEntries) throw Error(ErrorCode::SpecOverflow, "junk overflow");
        const std::uint32_t w = dex::entry_width(s);
        auto& table = c.table(s);
        for (std::uint32_t e = 0; e < extra; ++e) {
            std::vector<std::uint8_t> entry(w, 0);
            switch (s) {
                case Section::StringIds: {
                    const std::uint32_t rel = static_cast<std::uint32_t>(c.data.size());
                    append_string_item(c.data, random_identifier(rng));
                    put_u32(entry, 0, c.data_base + rel);
                    break;
                }
                case Section::TypeIds: put_u32(entry, 0, below_or_zero(rng, counts.strings)); break;
                case Section::ProtoIds: honest_proto(entry, 0, rng, counts, 0); break;
                case Section::FieldIds: honest_field(entry, 0, rng, counts); break;
                case Section::MethodIds: honest_method(entry, 0, rng, counts); break;
                case Section::ClassDefs: honest_class(entry, 0, rng, counts, 0); break;
            }
            const std::size_t slot = rng.below(table.size() / w + 1);
            table.insert(table.begin() + static_cast<std::ptrdiff_t>(slot * w), entry.begin(), entry.end());
        }
    }
}

void apply(DexContent& c, const IdentifierRandomization& r) {
    Rng rng(Rng::derive(r.seed, 0x52454E41));
    const std::uint32_t strings = c.count(Section::StringIds);
    if (strings == 0) return;
    auto& methods = c.table(Section::MethodIds);
    for (std::size_t at = 0; at + 8 <= methods.size(); at += 8) put_u32(methods, at + 4, below_or_zero(rng, strings));
    auto& fields = c.table(Section::FieldIds);
    for (std::size_t at = 0; at + 8 <= fields.size(); at += 8) put_u32(fields, at + 4, below_or_zero(rng, strings));
    auto& classes = c.table(Section::ClassDefs);
    for (std::size_t at = 0; at + 32 <= classes.size(); at += 32) put_u32(classes, at + 16, below_or_zero(rng, strings));
}

// Each string is XOR-ed in place and an encrypted, hex-armoured copy is
// appended; string_ids then point at the copies.
void apply(DexContent& c, const StringEncryptionSim& e) {
    auto& ids = c.table(Section::StringIds);
    std::uint32_t state = e.key == 0 ? 1u : e.key;
    auto next_key = [&state]() {
        state ^= state << 13;
        state ^= state >> 17;
        state ^= state << 5;
        return static_cast<std::uint8_t>(state);
    };
    static constexpr char kHex[] = "0123456789abcdef";
    for (std::size_t at = 0; at + 4 <= ids.size(); at += 4) {
        const std::uint32_t abs = get_u32(ids, at);
        if (abs < c.data_base) continue;
        std::size_t pos = abs - c.data_base;
        std::uint32_t len = 0;
        if (!read_uleb128(c.data, pos, len)) continue;
        std::size_t end = pos;
        while (end < c.data.size() && c.data[end] != 0) ++end;
        if (end >= c.data.size()) continue;
        std::string armoured;
        for (std::size_t i = pos; i < end; ++i) {
            const std::uint8_t k = next_key();
            const std::uint8_t x = static_cast<std::uint8_t>(c.data[i] ^ k);
            c.data[i] = x == 0 ? k : x;
            armoured.push_back(kHex[x >> 4]);
            armoured.push_back(kHex[x & 0xF]);
        }
        const std::uint32_t rel = static_cast<std::uint32_t>(c.data.size());
        append_string_item(c.data, armoured);
        put_u32(ids, at, c.data_base + rel);
    }
}

void apply(DexContent& c, const Realignment& r) {
    for (auto& p : c.padding) p += r.pad;
}

std::string xml_attr_name(Rng& rng) {
    const auto& words = identifier_words();
    std::string w = words[rng.below(words.size())];
    w[0] = static_cast<char>(w[0] - 'a' + 'A');
    return w;
}

const std::vector<std::string>& benign_permissions() {
    static const std::vector<std::string> p = {"INTERNET",
                                               "ACCESS_NETWORK_STATE",
                                               "ACCESS_WIFI_STATE",
                                               "WAKE_LOCK",
                                               "VIBRATE",
                                               "CAMERA",
                                               "ACCESS_FINE_LOCATION",
                                               "ACCESS_COARSE_LOCATION",
                                               "READ_EXTERNAL_STORAGE",
                                               "WRITE_EXTERNAL_STORAGE",
                                               "RECORD_AUDIO",
                                               "BLUETOOTH",
                                               "FOREGROUND_SERVICE",
                                               "POST_NOTIFICATIONS",
                                               "USE_BIOMETRIC",
                                               "NFC"};
    return p;
}

const std::vector<std::string>& suspicious_lines() {
    static const std::vector<std::string> lines = {
        "    <uses-permission android:name=\"android.permission.SEND_SMS\"/>\n",
        "    <uses-permission android:name=\"android.permission.RECEIVE_SMS\"/>\n",
        "    <uses-permission android:name=\"android.permission.READ_SMS\"/>\n",
        "    <uses-permission android:name=\"android.permission.READ_CONTACTS\"/>\n",
        "    <uses-permission android:name=\"android.permission.READ_CALL_LOG\"/>\n",
        "    <uses-permission android:name=\"android.permission.PROCESS_OUTGOING_CALLS\"/>\n",
        "    <uses-permission android:name=\"android.permission.READ_PHONE_STATE\"/>\n",
        "    <uses-permission android:name=\"android.permission.SYSTEM_ALERT_WINDOW\"/>\n",
        "    <uses-permission android:name=\"android.permission.RECEIVE_BOOT_COMPLETED\"/>\n",
        "    <uses-permission android:name=\"android.permission.WRITE_SETTINGS\"/>\n",
        "    <uses-permission android:name=\"android.permission.REQUEST_INSTALL_PACKAGES\"/>\n",
        "    <uses-permission android:name=\"android.permission.BIND_DEVICE_ADMIN\"/>\n",
        "    <receiver android:name=\".a0x7f3b\" android:enabled=\"true\"><intent-filter "
        "android:priority=\"2147483647\"><action android:name=\"android.provider.Telephony.SMS_RECEIVED\"/>"
        "</intent-filter></receiver>\n",
        "    <receiver android:name=\".b91c0e\"><intent-filter android:priority=\"999\"><action "
        "android:name=\"android.intent.action.BOOT_COMPLETED\"/></intent-filter></receiver>\n",
        "    <service android:name=\".x00f1\" android:exported=\"true\" android:process=\":remote\"/>\n",
        "    <receiver android:name=\".d3v1ce\" android:permission=\"android.permission.BIND_DEVICE_ADMIN\">"
        "<meta-data android:name=\"android.app.device_admin\" android:resource=\"@xml/p\"/></receiver>\n"};
    return lines;
}

std::string json_label(Label l) { return l == Label::Malicious ? "malicious" : "benign"; }

std::vector<std::string> describe_all(std::span<const ObfuscationTransform> ts) {
    std::vector<std::string> out;
    for (const auto& t : ts) out.push_back(describe(t));
    return out;
}

}  // namespace

std::uint32_t SectionCounts::index_count(dex::Section s) const {
    switch (s) {
        case Section::StringIds: return string_ids;
        case Section::TypeIds: return type_ids;
        case Section::ProtoIds: return proto_ids;
        case Section::FieldIds: return field_ids;
        case Section::MethodIds: return method_ids;
        case Section::ClassDefs: return class_defs;
    }
    return 0;
}

void validate(const SampleSpec& spec) {
    for (Section s : dex::kIndexSections) {
        if (spec.counts.index_count(s) > kMaxEntries) {
            throw Error(ErrorCode::SpecOverflow,
                        std::string(dex::section_name(s)) + " count " + std::to_string(spec.counts.index_count(s)));
        }
    }
    if (spec.counts.permissions > kMaxManifestItems || spec.counts.components > kMaxManifestItems) {
        throw Error(ErrorCode::SpecOverflow, "manifest item count");
    }
    if (!std::isfinite(spec.motif_strength) || spec.motif_strength < 0.0 || spec.motif_strength > 1.0) {
        throw Error(ErrorCode::SpecOverflow, "motif strength must lie in [0, 1]");
    }
    if (!std::isfinite(spec.drift) || spec.drift < 0.0) throw Error(ErrorCode::SpecOverflow, "drift must be >= 0");
}

double drift_weight(double t) { return t / (1.0 + t); }

DexContent DexContent::from_bytes(std::span<const std::uint8_t> raw) {
    const dex::DexHeader h = dex::parse_header(raw);
    DexContent c;
    std::copy(h.magic.begin(), h.magic.end(), c.magic.begin());
    c.signature = h.signature;
    std::uint64_t prev_end = dex::kHeaderSize;
    for (std::size_t i = 0; i < dex::kIndexSections.size(); ++i) {
        const Section s = dex::kIndexSections[i];
        const dex::SectionRef ref = h.section(s);
        if (ref.size == 0) continue;
        const std::uint64_t len = static_cast<std::uint64_t>(ref.size) * dex::entry_width(s);
        c.tables[i].assign(raw.begin() + ref.off, raw.begin() + static_cast<std::ptrdiff_t>(ref.off + len));
        c.padding[i] = ref.off >= prev_end ? static_cast<std::uint32_t>(ref.off - prev_end) : 0;
        prev_end = std::max<std::uint64_t>(prev_end, ref.off + len);
    }
    if (h.data.size > 0) {
        c.data.assign(raw.begin() + h.data.off, raw.begin() + static_cast<std::ptrdiff_t>(h.data.off + h.data.size));
        c.padding[6] = h.data.off >= prev_end ? static_cast<std::uint32_t>(h.data.off - prev_end) : 0;
        c.data_base = h.data.off;
    }
    return c;
}

std::vector<std::uint8_t> DexContent::serialize() const {
    DexContent work = *this;
    dex::DexHeader h;
    std::copy(magic.begin(), magic.end(), h.magic.begin());
    h.signature = signature;
    h.header_size = dex::kHeaderSize;
    h.endian_tag = dex::kEndianConstant;
    std::uint64_t cursor = dex::kHeaderSize;
    for (std::size_t i = 0; i < dex::kIndexSections.size(); ++i) {
        const Section s = dex::kIndexSections[i];
        if (tables[i].size() % dex::entry_width(s) != 0) {
            throw Error(ErrorCode::MalformedContainer, std::string(dex::section_name(s)) + " has a partial entry");
        }
        cursor += padding[i];
        if (tables[i].empty()) continue;
        h.section(s) = {count(s), static_cast<std::uint32_t>(cursor)};
        cursor += tables[i].size();
    }
    cursor += padding[6];
    if (!data.empty()) {
        h.data = {static_cast<std::uint32_t>(data.size()), static_cast<std::uint32_t>(cursor)};
        relocate(work, static_cast<std::int64_t>(cursor) - static_cast<std::int64_t>(data_base));
        cursor += data.size();
    }
    if (cursor > 0xFFFFFFFFULL) throw Error(ErrorCode::SpecOverflow, "file exceeds 4 GiB");
    h.file_size = static_cast<std::uint32_t>(cursor);
    std::vector<std::uint8_t> out(cursor, 0);
    for (std::size_t i = 0; i < dex::kIndexSections.size(); ++i) {
        const Section s = dex::kIndexSections[i];
        if (work.tables[i].empty()) continue;
        std::copy(work.tables[i].begin(), work.tables[i].end(), out.begin() + h.section(s).off);
    }
    if (!data.empty()) std::copy(data.begin(), data.end(), out.begin() + h.data.off);
    write_header(h, out);
    h.checksum = dex::compute_checksum(out);
    write_header(h, out);
    return out;
}

std::vector<std::uint8_t> build_synthetic_dex(const SampleSpec& spec, BuildRecord* record) {
    validate(spec);
    Rng rng(Rng::derive(spec.seed, 0x444558));
    const SectionCounts& n = spec.counts;
    const Honest honest{n.string_ids, n.type_ids, n.proto_ids};

    DexContent c;
    for (auto& b : c.signature) b = rng.byte();
    std::uint32_t index_size = 0;
    for (Section s : dex::kIndexSections) index_size += n.index_count(s) * dex::entry_width(s);
    c.data_base = dex::kHeaderSize + index_size;

    // Data: string items, proto parameter lists, then class data noise.
    std::vector<std::uint32_t> string_rel(n.string_ids);
    for (std::uint32_t i = 0; i < n.string_ids; ++i) {
        string_rel[i] = static_cast<std::uint32_t>(c.data.size());
        append_string_item(c.data, random_identifier(rng));
    }
    align4(c.data);
    std::vector<std::uint32_t> params_rel(n.proto_ids, 0);
    for (std::uint32_t i = 0; i < n.proto_ids; ++i) {
        if (!rng.bernoulli(0.6) || n.type_ids == 0) continue;
        params_rel[i] = static_cast<std::uint32_t>(c.data.size());
        const std::uint32_t k = 1 + static_cast<std::uint32_t>(rng.below(3));
        const std::size_t at = c.data.size();
        c.data.resize(at + 4 + 2 * k);
        put_u32(c.data, at, k);
        for (std::uint32_t e = 0; e < k; ++e) put_u16(c.data, at + 4 + 2 * e, below_or_zero(rng, n.type_ids));
        align4(c.data);
    }
    std::vector<std::uint32_t> class_rel(n.class_defs);
    for (std::uint32_t i = 0; i < n.class_defs; ++i) {
        class_rel[i] = static_cast<std::uint32_t>(c.data.size());
        const std::size_t len = 16 + rng.below(48);
        for (std::size_t b = 0; b < len; ++b) c.data.push_back(rng.byte());
        align4(c.data);
    }
    auto abs = [&c](std::uint32_t rel) { return c.data_base + rel; };

    auto& strings = c.table(Section::StringIds);
    strings.resize(4ull * n.string_ids);
    for (std::uint32_t i = 0; i < n.string_ids; ++i) put_u32(strings, 4ull * i, abs(string_rel[i]));

    auto& types = c.table(Section::TypeIds);
    types.resize(4ull * n.type_ids);
    for (std::uint32_t i = 0; i < n.type_ids; ++i) {
        const std::uint64_t base = n.string_ids == 0 ? 0 : static_cast<std::uint64_t>(i) * n.string_ids / n.type_ids;
        put_u32(types, 4ull * i, static_cast<std::uint32_t>(base));
    }

    auto& protos = c.table(Section::ProtoIds);
    protos.resize(12ull * n.proto_ids);
    for (std::uint32_t i = 0; i < n.proto_ids; ++i) {
        honest_proto(protos, 12ull * i, rng, honest, params_rel[i] == 0 ? 0 : abs(params_rel[i]));
    }

    auto& fields = c.table(Section::FieldIds);
    fields.resize(8ull * n.field_ids);
    for (std::uint32_t i = 0; i < n.field_ids; ++i) honest_field(fields, 8ull * i, rng, honest);

    // Every slot draws the same random values whatever the drift, so corpora
    // at different t differ only in which slots use the evolved pool.
    const Pool base_pool = sample_pool(spec);
    const bool drifts = base_pool == Pool::Malicious;
    const double w = drift_weight(spec.drift);
    std::size_t motifs = 0;
    auto& methods = c.table(Section::MethodIds);
    methods.resize(8ull * n.method_ids);
    for (std::uint32_t i = 0; i < n.method_ids; ++i) {
        const bool planted = rng.uniform() < spec.motif_strength;
        const std::size_t which = rng.below(kMethodMotifs);
        const bool evolved = rng.uniform() < w && drifts;
        honest_method(methods, 8ull * i, rng, honest);
        if (planted) {
            put_motif(methods, 8ull * i, method_motif(evolved ? Pool::Evolved : base_pool, which));
            ++motifs;
        }
    }
    auto& classes = c.table(Section::ClassDefs);
    classes.resize(32ull * n.class_defs);
    for (std::uint32_t i = 0; i < n.class_defs; ++i) {
        const bool planted = rng.uniform() < spec.motif_strength;
        const std::size_t which = rng.below(kClassMotifs);
        const bool evolved = rng.uniform() < w && drifts;
        honest_class(classes, 32ull * i, rng, honest, abs(class_rel[i]));
        if (planted) {
            put_motif(classes, 32ull * i, class_motif(evolved ? Pool::Evolved : base_pool, which));
            ++motifs;
        }
    }

    std::vector<std::uint8_t> out = c.serialize();
    if (record != nullptr) {
        record->header = dex::parse_header(out);
        record->index_bytes.clear();
        for (const auto& t : c.tables) record->index_bytes.insert(record->index_bytes.end(), t.begin(), t.end());
        record->motif_entries = motifs;
    }
    return out;
}

std::vector<std::uint8_t> build_synthetic_xml(const SampleSpec& spec) {
    validate(spec);
    Rng rng(Rng::derive(spec.seed, 0x584D4C));
    const auto& words = identifier_words();
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n"
       << "<manifest xmlns:android=\"http://schemas.android.com/apk/res/android\" package=\"com."
       << words[rng.below(words.size())] << "." << words[rng.below(words.size())] << "\" android:versionCode=\""
       << 1 + rng.below(400) << "\" android:versionName=\"" << 1 + rng.below(9) << "." << rng.below(20) << "\">\n";
    if (spec.counts.permissions == 0 && spec.counts.components == 0) {
        os << "</manifest>\n";
        const std::string s = os.str();
        return {s.begin(), s.end()};
    }
    os << "    <uses-sdk android:minSdkVersion=\"" << 19 + rng.below(8) << "\" android:targetSdkVersion=\""
       << 28 + rng.below(6) << "\"/>\n";
    const auto& perms = benign_permissions();
    std::vector<std::size_t> order(perms.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::uint32_t i = 0; i < spec.counts.permissions; ++i) {
        os << "    <uses-permission android:name=\"android.permission." << perms[order[i % order.size()]] << "\"/>\n";
    }
    const bool suspicious = spec.label == Label::Malicious && spec.xml_signal;
    for (const auto& line : suspicious_lines()) {
        const bool take = rng.uniform() < spec.motif_strength;
        if (suspicious && take) os << line;
    }
    os << "    <application android:label=\"@string/app_name\" android:icon=\"@mipmap/ic_launcher\">\n";
    for (std::uint32_t i = 0; i < spec.counts.components; ++i) {
        const std::string name = xml_attr_name(rng);
        switch (i == 0 ? 0 : 1 + rng.below(3)) {
            case 0:
                os << "        <activity android:name=\"." << name << "Activity\" android:exported=\"true\">\n"
                   << "            <intent-filter><action android:name=\"android.intent.action.MAIN\"/>"
                   << "<category android:name=\"android.intent.category.LAUNCHER\"/></intent-filter>\n"
                   << "        </activity>\n";
                break;
            case 1: os << "        <activity android:name=\"." << name << "Activity\"/>\n"; break;
            case 2: os << "        <service android:name=\"." << name << "Service\" android:exported=\"false\"/>\n"; break;
            default:
                os << "        <provider android:name=\"." << name << "Provider\" android:authorities=\"com."
                   << words[rng.below(words.size())] << ".files\" android:exported=\"false\"/>\n";
                break;
        }
    }
    os << "    </application>\n</manifest>\n";
    const std::string s = os.str();
    return {s.begin(), s.end()};
}

std::string describe(const ObfuscationTransform& t) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            char buf[64];
            if constexpr (std::is_same_v<T, JunkInsertion>) {
                std::snprintf(buf, sizeof buf, "junk:%g:%llu", v.rate, static_cast<unsigned long long>(v.seed));
            } else if constexpr (std::is_same_v<T, IdentifierRandomization>) {
                std::snprintf(buf, sizeof buf, "rename:%llu", static_cast<unsigned long long>(v.seed));
            } else if constexpr (std::is_same_v<T, StringEncryptionSim>) {
                std::snprintf(buf, sizeof buf, "encrypt:0x%08x", v.key);
            } else {
                std::snprintf(buf, sizeof buf, "realign:%u", v.pad);
            }
            return buf;
        },
        t);
}

ObfuscationTransform parse_transform(const std::string& text) {
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    std::vector<std::string> args;
    if (colon != std::string::npos) {
        std::stringstream ss(text.substr(colon + 1));
        std::string part;
        while (std::getline(ss, part, ':')) args.push_back(part);
    }
    auto bad = [&text]() { return Error(ErrorCode::BadConfig, "bad transform '" + text + "'"); };
    auto to_u64 = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(s, &used, 0);
            if (used != s.size()) throw bad();
            return static_cast<std::uint64_t>(v);
        } catch (const std::logic_error&) {
            throw bad();
        }
    };
    auto to_double = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size() || !std::isfinite(v) || v < 0.0) throw bad();
            return v;
        } catch (const std::logic_error&) {
            throw bad();
        }
    };
    if (kind == "junk") {
        JunkInsertion j;
        if (!args.empty()) j.rate = to_double(args[0]);
        if (args.size() > 1) j.seed = to_u64(args[1]);
        if (args.size() > 2) throw bad();
        return j;
    }
    if (kind == "rename") {
        IdentifierRandomization r;
        if (!args.empty()) r.seed = to_u64(args[0]);
        if (args.size() > 1) throw bad();
        return r;
    }
    if (kind == "encrypt") {
        StringEncryptionSim e;
        if (!args.empty()) e.key = static_cast<std::uint32_t>(to_u64(args[0]));
        if (args.size() > 1) throw bad();
        return e;
    }
    if (kind == "realign") {
        Realignment r;
        if (!args.empty()) r.pad = static_cast<std::uint32_t>(to_u64(args[0]));
        if (args.size() > 1) throw bad();
        return r;
    }
    throw bad();
}

std::vector<ObfuscationTransform> default_obfuscation(std::uint64_t seed) {
    return {JunkInsertion{0.5, Rng::derive(seed, 1)}, IdentifierRandomization{Rng::derive(seed, 2)},
            StringEncryptionSim{static_cast<std::uint32_t>(Rng::derive(seed, 3))}, Realignment{16}};
}

std::vector<std::uint8_t> obfuscate(std::span<const std::uint8_t> dex_bytes,
                                    std::span<const ObfuscationTransform> transforms) {
    std::vector<std::uint8_t> current(dex_bytes.begin(), dex_bytes.end());
    if (transforms.empty()) {
        dex::parse_header(current);
        return current;
    }
    for (const auto& t : transforms) {
        DexContent c = DexContent::from_bytes(current);
        std::visit([&c](const auto& v) { apply(c, v); }, t);
        current = c.serialize();
    }
    return current;
}

std::vector<SampleSpec> plan_corpus(const CorpusOptions& opts) {
    if (!(opts.malicious_fraction >= 0.0 && opts.malicious_fraction <= 1.0)) {
        throw Error(ErrorCode::BadConfig, "malicious fraction must lie in [0, 1]");
    }
    if (!(opts.dex_hidden_rate >= 0.0 && opts.xml_hidden_rate >= 0.0 &&
          opts.dex_hidden_rate + opts.xml_hidden_rate <= 1.0)) {
        throw Error(ErrorCode::BadConfig, "hidden rates must be >= 0 and sum to at most 1");
    }
    const auto n_mal = static_cast<std::size_t>(std::llround(opts.malicious_fraction * static_cast<double>(opts.n)));
    std::vector<Label> labels(opts.n, Label::Benign);
    for (std::size_t i = 0; i < n_mal; ++i) labels[i] = Label::Malicious;
    Rng shuffle(Rng::derive(opts.seed, 0x4C4142));
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[shuffle.below(i)]);

    std::vector<SampleSpec> specs(opts.n);
    for (std::size_t i = 0; i < opts.n; ++i) {
        Rng rng(Rng::derive(opts.seed, 0x10000 + i));
        SampleSpec& s = specs[i];
        s.label = labels[i];
        s.seed = Rng::derive(opts.seed, i);
        s.motif_strength = opts.motif_strength;
        s.drift = opts.drift;
        auto span = [&rng](std::uint32_t lo, std::uint32_t hi) {
            return lo + static_cast<std::uint32_t>(rng.below(hi - lo + 1));
        };
        s.counts.string_ids = span(150, 300);
        s.counts.type_ids = span(60, 120);
        s.counts.proto_ids = span(30, 80);
        s.counts.field_ids = span(80, 200);
        s.counts.method_ids = span(200, 450);
        s.counts.class_defs = span(30, 80);
        s.counts.permissions = span(3, 10);
        s.counts.components = span(1, 6);
        // One draw decides which view (if any) hides the payload, so no
        // malicious sample hides in both.
        const double u = rng.uniform();
        if (s.label == Label::Malicious) {
            s.dex_signal = !(u < opts.dex_hidden_rate);
            s.xml_signal = !(u >= opts.dex_hidden_rate && u < opts.dex_hidden_rate + opts.xml_hidden_rate);
        }
    }
    return specs;
}

std::vector<SyntheticSample> synthesize(const CorpusOptions& opts) {
    const std::vector<SampleSpec> specs = plan_corpus(opts);
    std::vector<SyntheticSample> out(specs.size());
    const std::vector<std::string> names = describe_all(opts.transforms);
    parallel_for(specs.size(), opts.jobs, [&](std::size_t i) {
        SyntheticSample& s = out[i];
        char id[32];
        std::snprintf(id, sizeof id, "s%06zu", i);
        s.id = id;
        s.spec = specs[i];
        s.dex = obfuscate(build_synthetic_dex(specs[i]), opts.transforms);
        s.xml = build_synthetic_xml(specs[i]);
        s.transforms = names;
    });
    return out;
}

CorpusManifest gen_corpus(const CorpusOptions& opts, const std::filesystem::path& out_dir) {
    const image::ImageGeometry dex_geom(opts.dex_width, opts.dex_height);
    const image::ImageGeometry xml_geom(opts.xml_width, opts.xml_height);
    std::error_code ec;
    for (const char* sub : {"dex", "xml", "img"}) {
        std::filesystem::create_directories(out_dir / sub, ec);
        if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + (out_dir / sub).string() + ": " + ec.message());
    }
    const std::vector<SyntheticSample> samples = synthesize(opts);
    CorpusManifest manifest{out_dir, std::vector<ManifestRecord>(samples.size())};
    parallel_for(samples.size(), opts.jobs, [&](std::size_t i) {
        const SyntheticSample& s = samples[i];
        ManifestRecord& r = manifest.records[i];
        r.id = s.id;
        r.label = s.spec.label;
        r.dex_path = "dex/" + s.id + ".dex";
        r.xml_path = "xml/" + s.id + ".xml";
        r.dex_png = "img/" + s.id + ".dex.png";
        r.xml_png = "img/" + s.id + ".xml.png";
        r.transforms = s.transforms;
        r.drift = s.spec.drift;
        r.dex_signal = s.spec.dex_signal;
        r.xml_signal = s.spec.xml_signal;
        const image::RgbImage di = dex_to_image(s.dex, dex_geom);
        const image::RgbImage xi = image::xml_to_image(s.xml, xml_geom);
        r.truncated = di.truncated || xi.truncated;
        write_bytes(out_dir / r.dex_path, s.dex);
        write_bytes(out_dir / r.xml_path, s.xml);
        write_bytes(out_dir / r.dex_png, image::encode_image(di));
        write_bytes(out_dir / r.xml_png, image::encode_image(xi));
    });
    std::string lines;
    for (const ManifestRecord& r : manifest.records) {
        nlohmann::json j = {{"id", r.id},
                            {"label", json_label(r.label)},
                            {"dex", r.dex_path},
                            {"xml", r.xml_path},
                            {"dex_png", r.dex_png},
                            {"xml_png", r.xml_png},
                            {"transforms", r.transforms},
                            {"t", r.drift},
                            {"dex_signal", r.dex_signal},
                            {"xml_signal", r.xml_signal},
                            {"truncated", r.truncated}};
        lines += j.dump();
        lines += '\n';
    }
    write_text(out_dir / "manifest.jsonl", lines);
    return manifest;
}

CorpusManifest read_manifest(const std::filesystem::path& corpus_root) {
    std::ifstream in(corpus_root / "manifest.jsonl");
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + (corpus_root / "manifest.jsonl").string());
    CorpusManifest m{corpus_root, {}};
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestRecord r;
            r.id = j.at("id").get<std::string>();
            const std::string label = j.at("label").get<std::string>();
            if (label != "benign" && label != "malicious") throw Error(ErrorCode::MalformedContainer, "label");
            r.label = label == "malicious" ? Label::Malicious : Label::Benign;
            r.dex_path = j.at("dex").get<std::string>();
            r.xml_path = j.at("xml").get<std::string>();
            r.dex_png = j.at("dex_png").get<std::string>();
            r.xml_png = j.at("xml_png").get<std::string>();
            r.transforms = j.value("transforms", std::vector<std::string>{});
            r.drift = j.value("t", 0.0);
            r.dex_signal = j.value("dex_signal", true);
            r.xml_signal = j.value("xml_signal", true);
            r.truncated = j.value("truncated", false);
            if (!ids.insert(r.id).second) throw Error(ErrorCode::MalformedContainer, "duplicate id " + r.id);
            m.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::MalformedContainer, "manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

std::array<double, 256> byte_histogram(std::span<const std::uint8_t> bytes) {
    std::array<double, 256> h{};
    for (std::uint8_t b : bytes) h[b] += 1.0;
    if (!bytes.empty()) {
        for (double& v : h) v /= static_cast<double>(bytes.size());
    }
    return h;
}

double total_variation(const std::array<double, 256>& a, const std::array<double, 256>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < 256; ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
}

}  // namespace bido::synth
