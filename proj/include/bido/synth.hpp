#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bido/dex.hpp"
#include "bido/image.hpp"

namespace bido::synth {

enum class Label : int { Benign = 0, Malicious = 1 };

struct SectionCounts {
    std::uint32_t string_ids = 0;
    std::uint32_t type_ids = 0;
    std::uint32_t proto_ids = 0;
    std::uint32_t field_ids = 0;
    std::uint32_t method_ids = 0;
    std::uint32_t class_defs = 0;
    // Manifest shape.
    std::uint32_t permissions = 0;
    std::uint32_t components = 0;

    std::uint32_t index_count(dex::Section s) const;
};

struct SampleSpec {
    Label label = Label::Benign;
    std::uint64_t seed = 0;
    SectionCounts counts;
    double motif_strength = 0.8;  // p: fraction of method/class entries carrying a motif
    double drift = 0.0;           // t >= 0
    // A malicious sample whose modality is not carrying the label draws from
    // the benign pool there (a payload that hides in one view).
    bool dex_signal = true;
    bool xml_signal = true;
};

// Throws Error{SpecOverflow} when counts exceed builder limits or p, t are
// out of range.
void validate(const SampleSpec& spec);

// Probability that a malicious motif is in its evolved form at drift t.
double drift_weight(double t);

// Structured DEX: the six index tables in canonical order, optional padding
// before each table and before data, and the data section. Absolute offsets
// stored in table entries are relocated when the layout changes.
struct DexContent {
    std::array<std::vector<std::uint8_t>, 6> tables;
    std::array<std::uint32_t, 7> padding{};
    std::vector<std::uint8_t> data;
    std::uint32_t data_base = dex::kHeaderSize;  // data_off assumed by stored offsets
    std::array<std::uint8_t, 8> magic{0x64, 0x65, 0x78, 0x0A, 0x30, 0x33, 0x35, 0x00};
    std::array<std::uint8_t, 20> signature{};

    std::vector<std::uint8_t>& table(dex::Section s) { return tables[static_cast<std::size_t>(s)]; }
    const std::vector<std::uint8_t>& table(dex::Section s) const { return tables[static_cast<std::size_t>(s)]; }
    std::uint32_t count(dex::Section s) const {
        return static_cast<std::uint32_t>(table(s).size() / dex::entry_width(s));
    }

    // Parses a DEX stream; tables may appear in any file order.
    static DexContent from_bytes(std::span<const std::uint8_t> raw);
    // Header re-synthesized (sizes, offsets, file_size, checksum).
    std::vector<std::uint8_t> serialize() const;
};

// What the builder planted, for round-trip checks.
struct BuildRecord {
    dex::DexHeader header;
    std::vector<std::uint8_t> index_bytes;
    std::size_t motif_entries = 0;
};

std::vector<std::uint8_t> build_synthetic_dex(const SampleSpec& spec, BuildRecord* record = nullptr);
std::vector<std::uint8_t> build_synthetic_xml(const SampleSpec& spec);

struct JunkInsertion {
    double rate = 0.5;
    std::uint64_t seed = 1;
};
struct IdentifierRandomization {
    std::uint64_t seed = 1;
};
struct StringEncryptionSim {
    std::uint32_t key = 0x5A17C3E9;
};
struct Realignment {
    std::uint32_t pad = 16;
};

using ObfuscationTransform = std::variant<JunkInsertion, IdentifierRandomization, StringEncryptionSim, Realignment>;

std::string describe(const ObfuscationTransform& t);
// Parses "junk:0.5", "rename:7", "encrypt:0x5a17c3e9", "realign:16".
ObfuscationTransform parse_transform(const std::string& text);
// The four transforms applied in sequence, seeded.
std::vector<ObfuscationTransform> default_obfuscation(std::uint64_t seed);

// Applies transforms in order; the output parses. An empty list is identity.
std::vector<std::uint8_t> obfuscate(std::span<const std::uint8_t> dex_bytes,
                                    std::span<const ObfuscationTransform> transforms);

struct CorpusOptions {
    std::size_t n = 1000;
    double malicious_fraction = 0.5;
    double motif_strength = 0.8;
    double drift = 0.0;
    double dex_hidden_rate = 0.15;  // malicious samples without DEX signal
    double xml_hidden_rate = 0.3;  // malicious samples without manifest signal
    std::vector<ObfuscationTransform> transforms;
    std::uint64_t seed = 1;
    std::size_t dex_width = 64, dex_height = 64;
    std::size_t xml_width = 64, xml_height = 64;
    std::size_t jobs = 1;
};

// Balanced-by-default spec list; counts drawn per sample from the seed.
std::vector<SampleSpec> plan_corpus(const CorpusOptions& opts);

struct SyntheticSample {
    std::string id;
    SampleSpec spec;
    std::vector<std::uint8_t> dex;  // after transforms
    std::vector<std::uint8_t> xml;
    std::vector<std::string> transforms;
};

// In-memory corpus, parallel over opts.jobs workers; output independent of jobs.
std::vector<SyntheticSample> synthesize(const CorpusOptions& opts);

struct ManifestRecord {
    std::string id;
    Label label = Label::Benign;
    std::string dex_path, xml_path, dex_png, xml_png;  // relative to the corpus root
    std::vector<std::string> transforms;
    double drift = 0.0;
    bool dex_signal = true;
    bool xml_signal = true;
    bool truncated = false;
};

struct CorpusManifest {
    std::filesystem::path root;
    std::vector<ManifestRecord> records;
};

// Writes corpus/{dex,xml,img}/<id>.* plus manifest.jsonl under out_dir.
// Throws Error{IoFailure}.
CorpusManifest gen_corpus(const CorpusOptions& opts, const std::filesystem::path& out_dir);
CorpusManifest read_manifest(const std::filesystem::path& corpus_root);

// Normalized byte histogram (256 bins).
std::array<double, 256> byte_histogram(std::span<const std::uint8_t> bytes);
double total_variation(const std::array<double, 256>& a, const std::array<double, 256>& b);

}  // namespace bido::synth
