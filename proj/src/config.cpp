#include "bido/config.hpp"

#include <cmath>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "bido/error.hpp"

namespace bido {
namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep)) out.push_back(trim(part));
    return out;
}

Error bad_value(const std::string& key, const std::string& value) {
    return Error(ErrorCode::BadConfig, "bad value '" + value + "' for " + key);
}

std::size_t to_size(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] == '-') throw bad_value(key, v);
        const unsigned long long n = std::stoull(v, &used, 10);
        if (used != v.size()) throw bad_value(key, v);
        return static_cast<std::size_t>(n);
    } catch (const std::logic_error&) {
        throw bad_value(key, v);
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] == '-') throw bad_value(key, v);
        const unsigned long long n = std::stoull(v, &used, 0);
        if (used != v.size()) throw bad_value(key, v);
        return n;
    } catch (const std::logic_error&) {
        throw bad_value(key, v);
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) throw bad_value(key, v);
        return d;
    } catch (const std::logic_error&) {
        throw bad_value(key, v);
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw bad_value(key, v);
}

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

struct Field {
    std::function<void(CliConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const CliConfig&)> get;
};

template <typename Get>
Field size_field(Get member) {
    return {[member](CliConfig& c, const std::string& k, const std::string& v) { member(c) = to_size(k, v); },
            [member](const CliConfig& c) { return std::to_string(member(const_cast<CliConfig&>(c))); }};
}

template <typename Get>
Field u64_field(Get member) {
    return {[member](CliConfig& c, const std::string& k, const std::string& v) { member(c) = to_u64(k, v); },
            [member](const CliConfig& c) { return std::to_string(member(const_cast<CliConfig&>(c))); }};
}

template <typename Get>
Field double_field(Get member) {
    return {[member](CliConfig& c, const std::string& k, const std::string& v) { member(c) = to_double(k, v); },
            [member](const CliConfig& c) { return fmt(member(const_cast<CliConfig&>(c))); }};
}

std::string stages_to_string(const std::vector<ConvStage>& stages) {
    std::string s;
    for (const ConvStage& st : stages) {
        if (!s.empty()) s += ',';
        s += std::to_string(st.kernel) + "x" + std::to_string(st.stride) + "x" + std::to_string(st.out_channels);
    }
    return s;
}

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = [] {
        std::vector<std::pair<std::string, Field>> t;
        t.emplace_back("batch_size", size_field([](CliConfig& c) -> std::size_t& { return c.train.batch_size; }));
        t.emplace_back("epochs", size_field([](CliConfig& c) -> std::size_t& { return c.train.epochs; }));
        t.emplace_back("lr", double_field([](CliConfig& c) -> double& { return c.train.learning_rate; }));
        t.emplace_back("momentum", double_field([](CliConfig& c) -> double& { return c.train.momentum; }));
        t.emplace_back("lr_decay", double_field([](CliConfig& c) -> double& { return c.train.decay_factor; }));
        t.emplace_back("lr_decay_every", size_field([](CliConfig& c) -> std::size_t& { return c.train.decay_every; }));
        t.emplace_back("alpha", double_field([](CliConfig& c) -> double& { return c.train.weights.alpha; }));
        t.emplace_back("beta", double_field([](CliConfig& c) -> double& { return c.train.weights.beta; }));
        t.emplace_back("gamma", double_field([](CliConfig& c) -> double& { return c.train.weights.gamma; }));
        t.emplace_back("delta", double_field([](CliConfig& c) -> double& { return c.train.weights.delta; }));
        t.emplace_back("seed", u64_field([](CliConfig& c) -> std::uint64_t& { return c.train.seed; }));
        t.emplace_back("split_seed", u64_field([](CliConfig& c) -> std::uint64_t& { return c.train.split_seed; }));
        t.emplace_back("divergence_limit",
                       double_field([](CliConfig& c) -> double& { return c.train.divergence_limit; }));
        t.emplace_back("predict", Field{[](CliConfig& c, const std::string&, const std::string& v) {
                                            c.train.predict = parse_predict_head(v);
                                        },
                                        [](const CliConfig& c) { return to_string(c.train.predict); }});
        t.emplace_back("k", size_field([](CliConfig& c) -> std::size_t& { return c.train.model.k; }));
        t.emplace_back("l", size_field([](CliConfig& c) -> std::size_t& { return c.train.model.l; }));
        t.emplace_back("h", size_field([](CliConfig& c) -> std::size_t& { return c.train.model.h; }));
        t.emplace_back("rank", size_field([](CliConfig& c) -> std::size_t& { return c.train.model.rank; }));
        t.emplace_back("margin", double_field([](CliConfig& c) -> double& { return c.train.model.margin; }));
        t.emplace_back("epsilon_d", double_field([](CliConfig& c) -> double& { return c.train.model.epsilon_d; }));
        t.emplace_back("mask_activation",
                       Field{[](CliConfig& c, const std::string& k, const std::string& v) {
                                 if (v == "sigmoid") c.train.model.mask_activation = MaskActivation::Sigmoid;
                                 else if (v == "relu") c.train.model.mask_activation = MaskActivation::Relu;
                                 else throw bad_value(k, v);
                             },
                             [](const CliConfig& c) {
                                 return std::string(c.train.model.mask_activation == MaskActivation::Sigmoid ? "sigmoid"
                                                                                                             : "relu");
                             }});
        t.emplace_back("dex_mlp_hidden", Field{[](CliConfig& c, const std::string& k, const std::string& v) {
                                                   std::vector<std::size_t> w;
                                                   for (const auto& p : split(v, ',')) w.push_back(to_size(k, p));
                                                   c.train.model.dex_mlp_hidden = w;
                                               },
                                               [](const CliConfig& c) {
                                                   std::string s;
                                                   for (std::size_t w : c.train.model.dex_mlp_hidden) {
                                                       if (!s.empty()) s += ',';
                                                       s += std::to_string(w);
                                                   }
                                                   return s;
                                               }});
        t.emplace_back("variant", Field{[](CliConfig& c, const std::string&, const std::string& v) {
                                            c.train.model.variant = parse_variant(v);
                                        },
                                        [](const CliConfig& c) { return to_string(c.train.model.variant); }});
        t.emplace_back("fusion", Field{[](CliConfig& c, const std::string&, const std::string& v) {
                                           c.train.model.fusion = parse_fusion(v);
                                       },
                                       [](const CliConfig& c) { return to_string(c.train.model.fusion); }});
        t.emplace_back("use_metric", Field{[](CliConfig& c, const std::string& k, const std::string& v) {
                                               c.train.model.use_metric = to_bool(k, v);
                                           },
                                           [](const CliConfig& c) {
                                               return std::string(c.train.model.use_metric ? "true" : "false");
                                           }});
        t.emplace_back("backbone.stages",
                       Field{[](CliConfig& c, const std::string& k, const std::string& v) {
                                 std::vector<ConvStage> stages;
                                 for (const auto& p : split(v, ',')) {
                                     const auto dims = split(p, 'x');
                                     if (dims.size() != 3) throw bad_value(k, v);
                                     stages.push_back({to_size(k, dims[0]), to_size(k, dims[1]), to_size(k, dims[2])});
                                 }
                                 if (stages.empty()) throw bad_value(k, v);
                                 c.train.model.backbone.stages = stages;
                             },
                             [](const CliConfig& c) { return stages_to_string(c.train.model.backbone.stages); }});
        t.emplace_back("backbone.activation", Field{[](CliConfig& c, const std::string&, const std::string& v) {
                                                        c.train.model.backbone.activation = nn::parse_activation(v);
                                                    },
                                                    [](const CliConfig& c) {
                                                        return nn::to_string(c.train.model.backbone.activation);
                                                    }});
        t.emplace_back("backbone.feature_gain",
                       double_field([](CliConfig& c) -> double& { return c.train.model.backbone.feature_gain; }));
        t.emplace_back("ops_head_bound", double_field([](CliConfig& c) -> double& { return c.train.model.ops_head_bound; }));
        t.emplace_back("backbone.xml_hidden",
                       size_field([](CliConfig& c) -> std::size_t& { return c.train.model.backbone.xml_hidden; }));
        t.emplace_back("image.width", Field{[](CliConfig& c, const std::string& k, const std::string& v) {
                                                const std::size_t w = to_size(k, v);
                                                c.train.model.backbone.input_width = w;
                                                c.corpus.dex_width = c.corpus.xml_width = w;
                                            },
                                            [](const CliConfig& c) { return std::to_string(c.corpus.dex_width); }});
        t.emplace_back("image.height", Field{[](CliConfig& c, const std::string& k, const std::string& v) {
                                                 const std::size_t h = to_size(k, v);
                                                 c.train.model.backbone.input_height = h;
                                                 c.corpus.dex_height = c.corpus.xml_height = h;
                                             },
                                             [](const CliConfig& c) { return std::to_string(c.corpus.dex_height); }});
        t.emplace_back("corpus.n", size_field([](CliConfig& c) -> std::size_t& { return c.corpus.n; }));
        t.emplace_back("corpus.malicious_fraction",
                       double_field([](CliConfig& c) -> double& { return c.corpus.malicious_fraction; }));
        t.emplace_back("corpus.motif_strength",
                       double_field([](CliConfig& c) -> double& { return c.corpus.motif_strength; }));
        t.emplace_back("corpus.drift", double_field([](CliConfig& c) -> double& { return c.corpus.drift; }));
        t.emplace_back("corpus.dex_hidden_rate",
                       double_field([](CliConfig& c) -> double& { return c.corpus.dex_hidden_rate; }));
        t.emplace_back("corpus.xml_hidden_rate",
                       double_field([](CliConfig& c) -> double& { return c.corpus.xml_hidden_rate; }));
        t.emplace_back("corpus.seed", u64_field([](CliConfig& c) -> std::uint64_t& { return c.corpus.seed; }));
        t.emplace_back("corpus.transforms", Field{[](CliConfig& c, const std::string&, const std::string& v) {
                                                      std::vector<synth::ObfuscationTransform> ts;
                                                      for (const auto& p : split(v, ',')) {
                                                          if (!p.empty()) ts.push_back(synth::parse_transform(p));
                                                      }
                                                      c.corpus.transforms = ts;
                                                  },
                                                  [](const CliConfig& c) {
                                                      std::string s;
                                                      for (const auto& t : c.corpus.transforms) {
                                                          if (!s.empty()) s += ',';
                                                          s += synth::describe(t);
                                                      }
                                                      return s;
                                                  }});
        t.emplace_back("jobs", size_field([](CliConfig& c) -> std::size_t& { return c.corpus.jobs; }));
        return t;
    }();
    return table;
}

const Field& field(const std::string& key) {
    for (const auto& [name, f] : fields()) {
        if (name == key) return f;
    }
    throw Error(ErrorCode::BadConfig, "unknown config key '" + key + "'");
}

}  // namespace

void CliConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, key, value); }

std::string CliConfig::get(const std::string& key) const { return field(key).get(*this); }

CliConfig CliConfig::parse(std::string_view text) {
    CliConfig c;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::BadConfig, "line " + std::to_string(lineno) + ": expected key=value");
        }
        c.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    }
    return c;
}

CliConfig CliConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const std::vector<std::string>& CliConfig::keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> k;
        for (const auto& [name, f] : fields()) k.push_back(name);
        return k;
    }();
    return names;
}

std::vector<std::pair<std::string, std::string>> CliConfig::entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [name, f] : fields()) out.emplace_back(name, f.get(*this));
    return out;
}

std::string CliConfig::dump() const {
    std::string s;
    for (const auto& [k, v] : entries()) s += k + " = " + v + "\n";
    return s;
}

}  // namespace bido
