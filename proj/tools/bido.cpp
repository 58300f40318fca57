#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bido/config.hpp"
#include "bido/convert.hpp"
#include "bido/dex.hpp"
#include "bido/error.hpp"
#include "bido/experiment.hpp"
#include "bido/io.hpp"
#include "bido/model.hpp"
#include "bido/parallel.hpp"
#include "bido/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;

int exit_code(bido::ErrorCode c) {
    switch (c) {
        case bido::ErrorCode::IoFailure: return kExitIo;
        case bido::ErrorCode::NonFinite:
        case bido::ErrorCode::NoConvergence: return kExitDiverged;
        default: return kExitInput;
    }
}

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "key = value recipe file");
    cmd->add_option("--set", c.sets, "override a config key (key=value), repeatable");
    cmd->add_option("--seed", c.seed, "seed for every random draw (falls back to BIDO_SEED)");
    cmd->add_option("--jobs", c.jobs, "worker threads for conversion and corpus generation");
}

// Recipe file, then --set pairs, then the named flags in `extra`.
bido::CliConfig resolve(const Common& c, const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    bido::CliConfig cfg = c.config.empty() ? bido::CliConfig{} : bido::CliConfig::load(c.config);
    for (const std::string& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw bido::Error(bido::ErrorCode::BadConfig, "--set expects key=value: " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [k, v] : extra) cfg.set(k, v);
    std::optional<std::string> seed;
    if (c.seed) {
        seed = std::to_string(*c.seed);
    } else if (const char* env = std::getenv("BIDO_SEED"); env && *env) {
        seed = env;
    }
    if (seed) {
        cfg.set("seed", *seed);
        cfg.set("corpus.seed", *seed);
    }
    if (c.jobs) cfg.set("jobs", std::to_string(*c.jobs));
    return cfg;
}

void emit(const json& j, bool compact = false) { std::cout << (compact ? j.dump() : j.dump(2)) << '\n'; }

void write_report(const std::string& path, const json& j) {
    if (!path.empty()) bido::write_text(path, j.dump(2) + "\n");
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw bido::Error(bido::ErrorCode::BadConfig, "bad integer list '" + text + "'");
        }
    }
    if (out.empty()) throw bido::Error(bido::ErrorCode::BadConfig, "empty list");
    return out;
}

bido::image::ImageGeometry dex_geometry(const bido::CliConfig& c) {
    return {c.corpus.dex_width, c.corpus.dex_height};
}
bido::image::ImageGeometry xml_geometry(const bido::CliConfig& c) {
    return {c.corpus.xml_width, c.corpus.xml_height};
}

std::vector<bido::Sample> corpus_samples(const bido::CliConfig& c, const std::string& root) {
    return bido::experiment::load_samples(bido::synth::read_manifest(root), dex_geometry(c), xml_geometry(c),
                                          c.corpus.jobs);
}

fs::path sidecar_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".json"); }

json header_json(const bido::dex::DexHeader& h) {
    auto hex = [](auto bytes) {
        static constexpr char kHex[] = "0123456789abcdef";
        std::string s;
        for (std::uint8_t b : bytes) {
            s.push_back(kHex[b >> 4]);
            s.push_back(kHex[b & 0xF]);
        }
        return s;
    };
    json sections = json::object();
    for (bido::dex::Section s : bido::dex::kIndexSections) {
        sections[std::string(bido::dex::section_name(s))] = {{"size", h.section(s).size}, {"off", h.section(s).off}};
    }
    sections["data"] = {{"size", h.data.size}, {"off", h.data.off}};
    return {{"magic", hex(h.magic)},       {"checksum", h.checksum},     {"signature", hex(h.signature)},
            {"file_size", h.file_size},    {"header_size", h.header_size}, {"endian_tag", h.endian_tag},
            {"link_size", h.link_size},    {"link_off", h.link_off},     {"map_off", h.map_off},
            {"sections", sections}};
}

int cmd_convert(const Common& common, const std::vector<std::string>& inputs, const std::string& kind,
                const std::string& output, const std::string& out_dir, const std::string& format, int quality,
                bool strict, const std::vector<std::pair<std::string, std::string>>& extra) {
    const bido::CliConfig cfg = resolve(common, extra);
    if (inputs.size() > 1 && out_dir.empty()) {
        throw bido::Error(bido::ErrorCode::BadConfig, "several inputs need --out-dir");
    }
    const auto fmt = format == "jpeg" ? bido::image::Format::Jpeg : bido::image::Format::LosslessPng;
    const auto geom = kind == "dex" ? dex_geometry(cfg) : xml_geometry(cfg);
    const std::string ext = fmt == bido::image::Format::Jpeg ? ".jpg" : ".png";
    std::vector<json> rows(inputs.size());
    std::vector<fs::path> targets(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        targets[i] = out_dir.empty() ? (output.empty() ? fs::path(inputs[i] + ext) : fs::path(output))
                                     : fs::path(out_dir) / (fs::path(inputs[i]).filename().string() + ext);
    }
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw bido::Error(bido::ErrorCode::IoFailure, "cannot create " + out_dir + ": " + ec.message());
    }
    bido::parallel_for(inputs.size(), cfg.corpus.jobs, [&](std::size_t i) {
        const std::vector<std::uint8_t> raw = bido::read_bytes(inputs[i]);
        const bido::image::RgbImage img = kind == "dex" ? bido::dex_to_image(raw, geom, {strict})
                                                        : bido::image::xml_to_image(raw, geom);
        bido::write_bytes(targets[i], bido::image::encode_image(img, fmt, quality));
        rows[i] = {{"input", inputs[i]},
                   {"output", targets[i].string()},
                   {"kind", kind},
                   {"width", geom.width()},
                   {"height", geom.height()},
                   {"truncated", img.truncated}};
    });
    emit(rows.size() == 1 ? rows[0] : json(rows));
    return kExitOk;
}

int cmd_gen_corpus(const Common& common, const std::string& out, const std::vector<std::pair<std::string, std::string>>& extra) {
    const bido::CliConfig cfg = resolve(common, extra);
    const bido::synth::CorpusManifest m = bido::synth::gen_corpus(cfg.corpus, out);
    std::size_t malicious = 0, truncated = 0;
    for (const auto& r : m.records) {
        malicious += r.label == bido::synth::Label::Malicious;
        truncated += r.truncated;
    }
    emit({{"root", m.root.string()},
          {"n", m.records.size()},
          {"malicious", malicious},
          {"benign", m.records.size() - malicious},
          {"truncated", truncated},
          {"seed", cfg.corpus.seed},
          {"manifest", (m.root / "manifest.jsonl").string()}});
    return kExitOk;
}

int cmd_train(const Common& common, const std::string& corpus, const std::string& out, std::string history_path,
              const std::vector<std::pair<std::string, std::string>>& extra) {
    const bido::CliConfig cfg = resolve(common, extra);
    const std::vector<bido::Sample> samples = corpus_samples(cfg, corpus);
    bido::TrainHooks hooks;
    hooks.on_epoch = [](const bido::EpochRecord& r) { std::cerr << r.to_json().dump() << '\n'; };
    bido::TrainResult result = bido::train(samples, cfg.train, hooks);
    bido::save_model(out, result.model);
    json recipe = json::object();
    for (const auto& [k, v] : cfg.entries()) recipe[k] = v;
    bido::write_text(sidecar_path(out), json{{"model", bido::to_json(result.model.config())},
                                             {"split_seed", cfg.train.split_seed},
                                             {"predict", bido::to_string(cfg.train.predict)},
                                             {"recipe", recipe}}
                                            .dump(2) +
                                            "\n");
    if (history_path.empty()) history_path = out + ".history.jsonl";
    bido::write_text(history_path, bido::history_to_jsonl(result.history));
    json report = {{"checkpoint", out},
                   {"history", history_path},
                   {"epochs", result.history.size()},
                   {"fingerprint", bido::experiment::fingerprint(result.model)},
                   {"train_size", result.split.train.size()},
                   {"val_size", result.split.val.size()},
                   {"test_size", result.split.test.size()}};
    report["test"] = result.split.test.empty()
                         ? json()
                         : bido::evaluate(result.model, samples, result.split.test, cfg.train.predict).to_json();
    emit(report);
    return kExitOk;
}

int cmd_eval(const Common& common, const std::string& model_path, const std::string& corpus, const std::string& split,
             const std::string& head, std::optional<std::uint64_t> obfuscate_seed, const std::string& report_path) {
    bido::CliConfig cfg = resolve(common);
    json side;
    try {
        side = json::parse(bido::read_text(sidecar_path(model_path)));
    } catch (const json::exception& e) {
        throw bido::Error(bido::ErrorCode::BadCheckpoint, std::string("model sidecar: ") + e.what());
    }
    const bido::ModelConfig mc = bido::model_config_from_json(side.at("model"));
    const bido::BidoModel model = bido::load_model(model_path, mc);
    cfg.corpus.dex_width = cfg.corpus.xml_width = mc.backbone.input_width;
    cfg.corpus.dex_height = cfg.corpus.xml_height = mc.backbone.input_height;
    const bido::synth::CorpusManifest manifest = bido::synth::read_manifest(corpus);
    std::vector<bido::Sample> samples;
    if (obfuscate_seed) {
        const auto raw = bido::experiment::obfuscate_all(bido::experiment::load_raw(manifest, cfg.corpus.jobs),
                                                         *obfuscate_seed, cfg.corpus.jobs);
        samples = bido::experiment::to_samples(raw, dex_geometry(cfg), xml_geometry(cfg), cfg.corpus.jobs);
    } else {
        samples = bido::experiment::load_samples(manifest, dex_geometry(cfg), xml_geometry(cfg), cfg.corpus.jobs);
    }
    std::vector<std::size_t> indices;
    if (split == "all") {
        for (std::size_t i = 0; i < samples.size(); ++i) indices.push_back(i);
    } else {
        const bido::DatasetSplit s = bido::split_dataset(samples.size(), side.value("split_seed", std::uint64_t{1}));
        indices = split == "train" ? s.train : split == "val" ? s.val : s.test;
    }
    const bido::PredictHead ph =
        head.empty() ? bido::parse_predict_head(side.value("predict", std::string("ops"))) : bido::parse_predict_head(head);
    const bido::Metrics m = bido::evaluate(model, samples, indices, ph);
    json report = {{"model", model_path},
                   {"corpus", corpus},
                   {"split", split},
                   {"head", bido::to_string(ph)},
                   {"obfuscated", obfuscate_seed.has_value()},
                   {"n", indices.size()},
                   {"metrics", m.to_json()}};
    write_report(report_path, report);
    emit(report);
    return kExitOk;
}

int cmd_inspect(const std::string& input, bool compact, bool strict) {
    const std::vector<std::uint8_t> raw = bido::read_bytes(input);
    const bido::dex::DexHeader h = bido::dex::parse_header(raw, {strict});
    const bido::dex::IndexBytes idx = bido::dex::extract_index_bytes(raw, h);
    json spans = json::array();
    for (const auto& s : idx.spans) {
        spans.push_back({{"section", std::string(bido::dex::section_name(s.section))},
                         {"offset", s.offset},
                         {"length", s.length}});
    }
    const auto hist = bido::synth::byte_histogram(idx.bytes);
    emit({{"input", input},
          {"header", header_json(h)},
          {"checksum_ok", bido::dex::compute_checksum(raw) == h.checksum},
          {"spans", spans},
          {"index_bytes", idx.bytes.size()},
          {"spectrum", hist}},
         compact);
    return kExitOk;
}

struct HarnessData {
    bido::CliConfig cfg;
    std::vector<bido::Sample> clean, obfuscated;
};

HarnessData harness_data(const Common& common, const std::string& corpus, std::optional<std::uint64_t> obf_seed,
                         const std::vector<std::pair<std::string, std::string>>& extra) {
    HarnessData d{resolve(common, extra), {}, {}};
    const auto manifest = bido::synth::read_manifest(corpus);
    d.clean = bido::experiment::load_samples(manifest, dex_geometry(d.cfg), xml_geometry(d.cfg), d.cfg.corpus.jobs);
    if (obf_seed) {
        const auto raw = bido::experiment::obfuscate_all(bido::experiment::load_raw(manifest, d.cfg.corpus.jobs),
                                                         *obf_seed, d.cfg.corpus.jobs);
        d.obfuscated = bido::experiment::to_samples(raw, dex_geometry(d.cfg), xml_geometry(d.cfg), d.cfg.corpus.jobs);
    }
    return d;
}

void progress(const bido::experiment::RunOutcome& r) { std::cerr << r.to_json().dump() << '\n'; }

int cmd_ablation(const Common& common, const std::string& corpus, const std::string& seeds, std::uint64_t obf_seed,
                 const std::string& report_path, const std::vector<std::pair<std::string, std::string>>& extra) {
    const HarnessData d = harness_data(common, corpus, obf_seed, extra);
    std::vector<bido::experiment::RunOutcome> runs;
    for (bido::Variant v : {bido::Variant::Full, bido::Variant::DexOnly, bido::Variant::XmlOnly}) {
        for (std::uint64_t s : parse_seeds(seeds)) {
            runs.push_back(bido::experiment::run(d.cfg.train, {v, d.cfg.train.model.fusion, d.cfg.train.model.k, s},
                                                 d.clean, d.obfuscated));
            progress(runs.back());
        }
    }
    const json report = bido::experiment::ablation_summary(runs);
    write_report(report_path, report);
    emit(report);
    return kExitOk;
}

int cmd_compare_fusion(const Common& common, const std::string& corpus, const std::string& seeds,
                       const std::string& modes, const std::string& report_path,
                       const std::vector<std::pair<std::string, std::string>>& extra) {
    const HarnessData d = harness_data(common, corpus, std::nullopt, extra);
    std::vector<bido::FusionMode> fusions;
    std::stringstream in(modes);
    for (std::string m; std::getline(in, m, ',');) fusions.push_back(bido::parse_fusion(m));
    std::vector<bido::experiment::RunOutcome> runs;
    for (bido::FusionMode f : fusions) {
        for (std::uint64_t s : parse_seeds(seeds)) {
            runs.push_back(bido::experiment::run(d.cfg.train, {d.cfg.train.model.variant, f, d.cfg.train.model.k, s},
                                                 d.clean));
            progress(runs.back());
        }
    }
    const json report = bido::experiment::fusion_summary(runs);
    write_report(report_path, report);
    emit(report);
    return kExitOk;
}

int cmd_k_sweep(const Common& common, const std::string& corpus, const std::string& ks,
                const std::string& report_path, const std::vector<std::pair<std::string, std::string>>& extra) {
    const HarnessData d = harness_data(common, corpus, std::nullopt, extra);
    std::vector<bido::experiment::RunOutcome> runs;
    for (std::uint64_t k : parse_seeds(ks)) {
        runs.push_back(bido::experiment::run(
            d.cfg.train, {d.cfg.train.model.variant, d.cfg.train.model.fusion, static_cast<std::size_t>(k), d.cfg.train.seed},
            d.clean));
        progress(runs.back());
    }
    const json report = bido::experiment::k_sweep_table(runs);
    write_report(report_path, report);
    emit(report);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bido: DEX/XML image malware detector"};
    app.require_subcommand(1);
    Common common;

    std::vector<std::pair<std::string, std::string>> extra;
    auto flag_to_key = [&extra](CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
        cmd->add_option_function<std::string>(flag, [&extra, key](const std::string& v) { extra.emplace_back(key, v); },
                                              help);
    };

    std::vector<std::string> conv_inputs;
    std::string conv_kind, conv_out, conv_dir, conv_format = "png";
    int conv_quality = 95;
    bool strict = false;
    auto* convert = app.add_subcommand("convert", "DEX or manifest file -> RGB image");
    add_common(convert, common);
    convert->add_option("inputs", conv_inputs, "input files")->required();
    convert->add_option("--kind", conv_kind, "dex or xml")->required()->check(CLI::IsMember({"dex", "xml"}));
    convert->add_option("-o,--output", conv_out, "output image (single input)");
    convert->add_option("--out-dir", conv_dir, "output directory (several inputs)");
    convert->add_option("--format", conv_format, "png or jpeg")->check(CLI::IsMember({"png", "jpeg"}));
    convert->add_option("--quality", conv_quality, "jpeg quality")->check(CLI::Range(1, 100));
    convert->add_flag("--strict", strict, "verify the DEX checksum");
    flag_to_key(convert, "--width", "image.width", "image width");
    flag_to_key(convert, "--height", "image.height", "image height");

    std::string gen_out;
    auto* gen = app.add_subcommand("gen-corpus", "write a labeled synthetic corpus");
    add_common(gen, common);
    gen->add_option("--out", gen_out, "corpus directory")->required();
    flag_to_key(gen, "--n", "corpus.n", "sample count");
    flag_to_key(gen, "--drift", "corpus.drift", "drift parameter t");
    flag_to_key(gen, "--motif-strength", "corpus.motif_strength", "malicious motif strength p");
    flag_to_key(gen, "--transforms", "corpus.transforms", "comma list, e.g. junk:0.5,rename:7,encrypt:0x1,realign:16");

    std::string corpus, train_out, history;
    auto* train = app.add_subcommand("train", "train on a corpus and write a checkpoint");
    add_common(train, common);
    train->add_option("--corpus", corpus, "corpus directory")->required();
    train->add_option("--out", train_out, "checkpoint path")->required();
    train->add_option("--history", history, "per-epoch JSON lines (default <out>.history.jsonl)");
    flag_to_key(train, "--epochs", "epochs", "epoch count");
    flag_to_key(train, "--variant", "variant", "full, dex-only or xml-only");
    flag_to_key(train, "--fusion", "fusion", "ops, sum or concat");

    std::string model_path, split = "test", head, report_path;
    std::optional<std::uint64_t> obf;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on a corpus split");
    add_common(eval, common);
    eval->add_option("--model", model_path, "checkpoint path")->required();
    eval->add_option("--corpus", corpus, "corpus directory")->required();
    eval->add_option("--split", split, "test, val, train or all")->check(CLI::IsMember({"test", "val", "train", "all"}));
    eval->add_option("--head", head, "ops or average (default: as trained)");
    eval->add_option("--obfuscate", obf, "score obfuscated copies, seeded");
    eval->add_option("--report", report_path, "also write the report here");

    std::string inspect_input;
    bool compact = false;
    auto* inspect = app.add_subcommand("inspect", "header, index spans and byte spectrum of a DEX file");
    inspect->add_option("input", inspect_input, "DEX file")->required();
    inspect->add_flag("--json", compact, "single-line JSON");
    inspect->add_flag("--strict", strict, "verify the DEX checksum");

    std::string seeds = "1,2,3", modes = "ops,sum,concat", ks = "2,4,8,16,32";
    std::uint64_t obf_seed = 99;
    auto* ablation = app.add_subcommand("ablation", "full vs dex-only vs xml-only, clean and obfuscated test F1");
    add_common(ablation, common);
    ablation->add_option("--corpus", corpus, "corpus directory")->required();
    ablation->add_option("--seeds", seeds, "comma list of model seeds");
    ablation->add_option("--obfuscate-seed", obf_seed, "seed of the obfuscated test copies");
    ablation->add_option("--report", report_path, "also write the report here");
    flag_to_key(ablation, "--epochs", "epochs", "epoch count");

    auto* fusion = app.add_subcommand("compare-fusion", "OPS vs summation vs concatenation fusion");
    add_common(fusion, common);
    fusion->add_option("--corpus", corpus, "corpus directory")->required();
    fusion->add_option("--seeds", seeds, "comma list of model seeds");
    fusion->add_option("--modes", modes, "comma list of fusion modes");
    fusion->add_option("--report", report_path, "also write the report here");
    flag_to_key(fusion, "--epochs", "epochs", "epoch count");

    auto* ksweep = app.add_subcommand("k-sweep", "train once per local feature map count K");
    add_common(ksweep, common);
    ksweep->add_option("--corpus", corpus, "corpus directory")->required();
    ksweep->add_option("--ks", ks, "comma list of K values");
    ksweep->add_option("--report", report_path, "also write the report here");
    flag_to_key(ksweep, "--epochs", "epochs", "epoch count");

    auto* show = app.add_subcommand("config", "print the resolved recipe");
    add_common(show, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*convert) return cmd_convert(common, conv_inputs, conv_kind, conv_out, conv_dir, conv_format, conv_quality, strict, extra);
        if (*gen) return cmd_gen_corpus(common, gen_out, extra);
        if (*train) return cmd_train(common, corpus, train_out, history, extra);
        if (*eval) return cmd_eval(common, model_path, corpus, split, head, obf, report_path);
        if (*inspect) return cmd_inspect(inspect_input, compact, strict);
        if (*ablation) return cmd_ablation(common, corpus, seeds, obf_seed, report_path, extra);
        if (*fusion) return cmd_compare_fusion(common, corpus, seeds, modes, report_path, extra);
        if (*ksweep) return cmd_k_sweep(common, corpus, ks, report_path, extra);
        if (*show) {
            std::cout << resolve(common).dump();
            return kExitOk;
        }
    } catch (const bido::Error& e) {
        std::cerr << "bido: " << e.what() << '\n';
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "bido: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitInput;
}
