#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "bido/image.hpp"
#include "bido/model.hpp"
#include "bido/synth.hpp"

namespace bido::experiment {

std::vector<Sample> to_samples(std::span<const synth::SyntheticSample> raw, image::ImageGeometry dex_geom,
                               image::ImageGeometry xml_geom, std::size_t jobs = 1);

// Decodes the PNG pairs a manifest lists. Throws Error{BadConfig} when an
// image does not have the expected geometry, Error{IoFailure} for a missing
// file.
std::vector<Sample> load_samples(const synth::CorpusManifest& manifest, image::ImageGeometry dex_geom,
                                 image::ImageGeometry xml_geom, std::size_t jobs = 1);

// Raw DEX and XML streams a manifest lists, with labels and signal flags.
std::vector<synth::SyntheticSample> load_raw(const synth::CorpusManifest& manifest, std::size_t jobs = 1);

// Every DEX passed through default_obfuscation(derive(seed, i)); manifests
// are untouched.
std::vector<synth::SyntheticSample> obfuscate_all(std::span<const synth::SyntheticSample> raw, std::uint64_t seed,
                                                  std::size_t jobs = 1);

// FNV-1a over parameter names and value bits.
std::uint64_t fingerprint(const BidoModel& model);

struct RunSpec {
    Variant variant = Variant::Full;
    FusionMode fusion = FusionMode::Ops;
    std::size_t k = 32;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
};

struct RunOutcome {
    RunSpec spec;
    Metrics clean;
    std::optional<Metrics> obfuscated;
    std::vector<EpochRecord> history;
    std::uint64_t fingerprint = 0;
    double seconds = 0.0;

    // Clean F1 minus obfuscated F1, undefined F1 read as 0.
    std::optional<double> drop() const;
    nlohmann::json to_json() const;
};

// Trains base with spec's overrides and scores the test split. obfuscated,
// when non-empty, is index-aligned with clean and scored on the same split.
RunOutcome run(const TrainConfig& base, const RunSpec& spec, std::span<const Sample> clean,
               std::span<const Sample> obfuscated = {});

// Means of clean F1, obfuscated F1 and drop per variant.
nlohmann::json ablation_summary(std::span<const RunOutcome> runs);
// Mean clean F1 per fusion mode.
nlohmann::json fusion_summary(std::span<const RunOutcome> runs);
// One row per run: k, seed, metrics, seconds.
nlohmann::json k_sweep_table(std::span<const RunOutcome> runs);

}  // namespace bido::experiment
