#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bido/model.hpp"
#include "bido/synth.hpp"

namespace bido {

// Flat key=value recipe covering training, model, backbone, geometry and
// corpus knobs. Every key has a default; unknown keys are rejected.
struct CliConfig {
    TrainConfig train;
    synth::CorpusOptions corpus;

    // Throws Error{BadConfig} for an unknown key or an unparsable value.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;

    // '#' starts a comment; blank lines are ignored.
    static CliConfig parse(std::string_view text);
    // Throws Error{IoFailure} if unreadable.
    static CliConfig load(const std::filesystem::path& path);

    static const std::vector<std::string>& keys();
    std::vector<std::pair<std::string, std::string>> entries() const;
    std::string dump() const;
};

}  // namespace bido
