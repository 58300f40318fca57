#include "bido/experiment.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <map>
#include <string>

#include "bido/convert.hpp"
#include "bido/error.hpp"
#include "bido/io.hpp"
#include "bido/parallel.hpp"
#include "bido/rng.hpp"

namespace bido::experiment {
namespace {

image::RgbImage read_png(const std::filesystem::path& path, image::ImageGeometry expected) {
    image::RgbImage img = image::decode_image(read_bytes(path));
    if (!(img.geometry == expected)) {
        throw Error(ErrorCode::BadConfig, path.string() + " is " + std::to_string(img.geometry.width()) + "x" +
                                              std::to_string(img.geometry.height()) + ", expected " +
                                              std::to_string(expected.width()) + "x" +
                                              std::to_string(expected.height()));
    }
    return img;
}

struct Accumulator {
    std::vector<std::uint64_t> seeds;
    double clean = 0.0, obfuscated = 0.0, drop = 0.0;
    std::size_t n = 0, n_obf = 0;

    void add(const RunOutcome& r) {
        seeds.push_back(r.spec.seed);
        clean += r.clean.f1_or_zero();
        ++n;
        if (auto d = r.drop()) {
            obfuscated += r.obfuscated->f1_or_zero();
            drop += *d;
            ++n_obf;
        }
    }
};

}  // namespace

std::vector<Sample> to_samples(std::span<const synth::SyntheticSample> raw, image::ImageGeometry dex_geom,
                               image::ImageGeometry xml_geom, std::size_t jobs) {
    std::vector<Sample> out(raw.size());
    parallel_for(raw.size(), jobs, [&](std::size_t i) {
        out[i] = {raw[i].id, dex_to_image(raw[i].dex, dex_geom), image::xml_to_image(raw[i].xml, xml_geom),
                  static_cast<int>(raw[i].spec.label)};
    });
    return out;
}

std::vector<Sample> load_samples(const synth::CorpusManifest& manifest, image::ImageGeometry dex_geom,
                                 image::ImageGeometry xml_geom, std::size_t jobs) {
    std::vector<Sample> out(manifest.records.size());
    parallel_for(out.size(), jobs, [&](std::size_t i) {
        const synth::ManifestRecord& r = manifest.records[i];
        out[i] = {r.id, read_png(manifest.root / r.dex_png, dex_geom), read_png(manifest.root / r.xml_png, xml_geom),
                  static_cast<int>(r.label)};
    });
    return out;
}

std::vector<synth::SyntheticSample> load_raw(const synth::CorpusManifest& manifest, std::size_t jobs) {
    std::vector<synth::SyntheticSample> out(manifest.records.size());
    parallel_for(out.size(), jobs, [&](std::size_t i) {
        const synth::ManifestRecord& r = manifest.records[i];
        synth::SyntheticSample& s = out[i];
        s.id = r.id;
        s.spec.label = r.label;
        s.spec.drift = r.drift;
        s.spec.dex_signal = r.dex_signal;
        s.spec.xml_signal = r.xml_signal;
        s.dex = read_bytes(manifest.root / r.dex_path);
        s.xml = read_bytes(manifest.root / r.xml_path);
        s.transforms = r.transforms;
    });
    return out;
}

std::vector<synth::SyntheticSample> obfuscate_all(std::span<const synth::SyntheticSample> raw, std::uint64_t seed,
                                                  std::size_t jobs) {
    std::vector<synth::SyntheticSample> out(raw.begin(), raw.end());
    parallel_for(out.size(), jobs, [&](std::size_t i) {
        const auto transforms = synth::default_obfuscation(Rng::derive(seed, i));
        out[i].dex = synth::obfuscate(raw[i].dex, transforms);
        for (const auto& t : transforms) out[i].transforms.push_back(synth::describe(t));
    });
    return out;
}

std::uint64_t fingerprint(const BidoModel& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const NamedParam& p : model.parameters()) {
        mix(p.name.data(), p.name.size());
        for (double v : p.tensor.values()) {
            const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
            mix(&bits, sizeof bits);
        }
    }
    return h;
}

nlohmann::json RunSpec::to_json() const {
    return {{"variant", to_string(variant)}, {"fusion", to_string(fusion)}, {"k", k}, {"seed", seed}};
}

std::optional<double> RunOutcome::drop() const {
    if (!obfuscated) return std::nullopt;
    return clean.f1_or_zero() - obfuscated->f1_or_zero();
}

nlohmann::json RunOutcome::to_json() const {
    nlohmann::json j = spec.to_json();
    j["clean"] = clean.to_json();
    j["obfuscated"] = obfuscated ? obfuscated->to_json() : nlohmann::json();
    j["drop"] = drop() ? nlohmann::json(*drop()) : nlohmann::json();
    j["epochs"] = history.size();
    j["final_loss"] = history.empty() ? nlohmann::json() : nlohmann::json(history.back().loss);
    j["fingerprint"] = fingerprint;
    j["seconds"] = seconds;
    return j;
}

RunOutcome run(const TrainConfig& base, const RunSpec& spec, std::span<const Sample> clean,
               std::span<const Sample> obfuscated) {
    if (!obfuscated.empty() && obfuscated.size() != clean.size()) {
        throw Error(ErrorCode::ShapeMismatch, "obfuscated set must align with the clean set");
    }
    TrainConfig cfg = base;
    cfg.model.variant = spec.variant;
    cfg.model.fusion = spec.fusion;
    cfg.model.k = spec.k;
    cfg.seed = spec.seed;
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult trained = train(clean, cfg);
    RunOutcome out;
    out.spec = spec;
    out.clean = evaluate(trained.model, clean, trained.split.test, cfg.predict);
    if (!obfuscated.empty()) out.obfuscated = evaluate(trained.model, obfuscated, trained.split.test, cfg.predict);
    out.history = std::move(trained.history);
    out.fingerprint = fingerprint(trained.model);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

nlohmann::json ablation_summary(std::span<const RunOutcome> runs) {
    std::map<std::string, Accumulator> by_variant;
    for (const RunOutcome& r : runs) by_variant[to_string(r.spec.variant)].add(r);
    nlohmann::json variants = nlohmann::json::object();
    for (const auto& [name, a] : by_variant) {
        variants[name] = {{"seeds", a.seeds},
                          {"clean_f1_mean", a.clean / static_cast<double>(a.n)},
                          {"obfuscated_f1_mean", a.n_obf ? nlohmann::json(a.obfuscated / a.n_obf) : nlohmann::json()},
                          {"drop_mean", a.n_obf ? nlohmann::json(a.drop / a.n_obf) : nlohmann::json()}};
    }
    nlohmann::json rows = nlohmann::json::array();
    for (const RunOutcome& r : runs) rows.push_back(r.to_json());
    return {{"variants", variants}, {"runs", rows}};
}

nlohmann::json fusion_summary(std::span<const RunOutcome> runs) {
    std::map<std::string, Accumulator> by_fusion;
    for (const RunOutcome& r : runs) by_fusion[to_string(r.spec.fusion)].add(r);
    nlohmann::json modes = nlohmann::json::object();
    for (const auto& [name, a] : by_fusion) {
        modes[name] = {{"seeds", a.seeds}, {"f1_mean", a.clean / static_cast<double>(a.n)}};
    }
    nlohmann::json rows = nlohmann::json::array();
    for (const RunOutcome& r : runs) rows.push_back(r.to_json());
    return {{"fusion", modes}, {"runs", rows}};
}

nlohmann::json k_sweep_table(std::span<const RunOutcome> runs) {
    nlohmann::json rows = nlohmann::json::array();
    for (const RunOutcome& r : runs) {
        rows.push_back({{"k", r.spec.k},
                        {"seed", r.spec.seed},
                        {"metrics", r.clean.to_json()},
                        {"epochs", r.history.size()},
                        {"seconds", r.seconds}});
    }
    return {{"rows", rows}};
}

}  // namespace bido::experiment
