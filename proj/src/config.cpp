#include "cdx/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cdx {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size())
        throw ConfigError(key + ": expected a number, got \"" + v + "\"");
    return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size())
        throw ConfigError(key + ": expected a non-negative integer, got \"" + v + "\"");
    return out;
}

std::vector<std::uint64_t> to_uints(const std::string& key, const std::string& v, std::size_t n) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_uint(key, trim(item)));
    if (out.size() != n)
        throw ConfigError(key + ": expected " + std::to_string(n) + " comma-separated integers, got \"" + v + "\"");
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"model.channels",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             auto xs = to_uints(k, v, 4);
             for (std::size_t i = 0; i < 4; ++i) c.model.channels[i] = xs[i];
         }},
        {"model.assignment",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             try {
                 c.model.assignment = EnhancerAssignment::parse(v);
             } catch (const std::invalid_argument& e) {
                 throw ConfigError(k + ": " + e.what());
             }
         }},
        {"model.phi_heads", [](RunConfig& c, auto& k, auto& v) { c.model.phi_heads = to_uint(k, v); }},
        {"model.attn_heads", [](RunConfig& c, auto& k, auto& v) { c.model.attn_heads = to_uint(k, v); }},
        {"model.embed", [](RunConfig& c, auto& k, auto& v) { c.model.embed = to_uint(k, v); }},
        {"model.init_seed", [](RunConfig& c, auto& k, auto& v) { c.init_seed = to_uint(k, v); }},
        {"train.epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = to_uint(k, v); }},
        {"train.batch", [](RunConfig& c, auto& k, auto& v) { c.train.batch = to_uint(k, v); }},
        {"train.lr", [](RunConfig& c, auto& k, auto& v) { c.train.adam.lr = to_double(k, v); }},
        {"train.beta1", [](RunConfig& c, auto& k, auto& v) { c.train.adam.beta1 = to_double(k, v); }},
        {"train.beta2", [](RunConfig& c, auto& k, auto& v) { c.train.adam.beta2 = to_double(k, v); }},
        {"train.adam_eps", [](RunConfig& c, auto& k, auto& v) { c.train.adam.eps = to_double(k, v); }},
        {"train.loss_ce", [](RunConfig& c, auto& k, auto& v) { c.train.loss.ce = to_double(k, v); }},
        {"train.loss_dice", [](RunConfig& c, auto& k, auto& v) { c.train.loss.dice = to_double(k, v); }},
        {"train.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = to_uint(k, v); }},
        {"data.source",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "synth")
                 c.data.source = DataConfig::Source::Synth;
             else if (v == "dir")
                 c.data.source = DataConfig::Source::Dir;
             else
                 throw ConfigError(k + ": expected synth or dir, got \"" + v + "\"");
         }},
        {"data.dir", [](RunConfig& c, auto&, auto& v) { c.data.dir = v; }},
        {"data.count", [](RunConfig& c, auto& k, auto& v) { c.data.count = to_uint(k, v); }},
        {"data.size", [](RunConfig& c, auto& k, auto& v) { c.data.synth.size = to_uint(k, v); }},
        {"data.seed", [](RunConfig& c, auto& k, auto& v) { c.data.synth.seed = to_uint(k, v); }},
        {"data.changes",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             auto xs = to_uints(k, v, 2);
             c.data.synth.changes_min = xs[0];
             c.data.synth.changes_max = xs[1];
         }},
        {"data.blobs",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             auto xs = to_uints(k, v, 2);
             c.data.synth.blobs_min = xs[0];
             c.data.synth.blobs_max = xs[1];
         }},
        {"data.jitter", [](RunConfig& c, auto& k, auto& v) { c.data.synth.jitter = to_double(k, v); }},
        {"data.texture", [](RunConfig& c, auto& k, auto& v) { c.data.synth.texture = to_double(k, v); }},
        {"data.removal", [](RunConfig& c, auto& k, auto& v) { c.data.synth.removal_prob = to_double(k, v); }},
        {"output.dir", [](RunConfig& c, auto&, auto& v) { c.out = v; }},
    };
    return table;
}

void set(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& t = setters();
    auto it = t.find(key);
    if (it == t.end()) throw ConfigError("unknown key " + key);
    it->second(cfg, key, value);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "train" && section != "data" && section != "output")
                throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "key outside any section");
        try {
            set(cfg, section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override \"" + assignment + "\" is not section.key=value");
    set(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string to_text(const RunConfig& c) {
    std::ostringstream o;
    const auto& ch = c.model.channels;
    const auto& s = c.data.synth;
    o << "[model]\n"
      << "channels = " << ch[0] << ',' << ch[1] << ',' << ch[2] << ',' << ch[3] << '\n'
      << "assignment = " << c.model.assignment.str() << '\n'
      << "phi_heads = " << c.model.phi_heads << '\n'
      << "attn_heads = " << c.model.attn_heads << '\n'
      << "embed = " << c.model.embed << '\n'
      << "init_seed = " << c.init_seed << '\n'
      << "[train]\n"
      << "epochs = " << c.train.epochs << '\n'
      << "batch = " << c.train.batch << '\n'
      << "lr = " << fmt(c.train.adam.lr) << '\n'
      << "beta1 = " << fmt(c.train.adam.beta1) << '\n'
      << "beta2 = " << fmt(c.train.adam.beta2) << '\n'
      << "adam_eps = " << fmt(c.train.adam.eps) << '\n'
      << "loss_ce = " << fmt(c.train.loss.ce) << '\n'
      << "loss_dice = " << fmt(c.train.loss.dice) << '\n'
      << "seed = " << c.train.seed << '\n'
      << "[data]\n"
      << "source = " << (c.data.source == DataConfig::Source::Synth ? "synth" : "dir") << '\n'
      << "dir = " << c.data.dir.string() << '\n'
      << "count = " << c.data.count << '\n'
      << "size = " << s.size << '\n'
      << "seed = " << s.seed << '\n'
      << "changes = " << s.changes_min << ',' << s.changes_max << '\n'
      << "blobs = " << s.blobs_min << ',' << s.blobs_max << '\n'
      << "jitter = " << fmt(s.jitter) << '\n'
      << "texture = " << fmt(s.texture) << '\n'
      << "removal = " << fmt(s.removal_prob) << '\n'
      << "[output]\n"
      << "dir = " << c.out.string() << '\n';
    return o.str();
}

std::uint64_t config_hash(const RunConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_text(cfg)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void validate(const RunConfig& c) {
    const auto& ch = c.model.channels;
    for (std::size_t i = 0; i < 4; ++i) {
        if (ch[i] == 0) throw ConfigError("model.channels: stage " + std::to_string(i) + " has zero channels");
        if (i && ch[i] <= ch[i - 1]) throw ConfigError("model.channels: counts must strictly increase");
        if (c.model.phi_heads == 0 || (2 * ch[i]) % c.model.phi_heads)
            throw ConfigError("model.phi_heads: " + std::to_string(c.model.phi_heads) + " does not divide " +
                              std::to_string(2 * ch[i]) + " (twice stage " + std::to_string(i) + "'s channels)");
    }
    if (c.model.embed == 0) throw ConfigError("model.embed must be positive");
    if (c.model.attn_heads == 0 || c.model.embed % c.model.attn_heads)
        throw ConfigError("model.attn_heads: " + std::to_string(c.model.attn_heads) + " does not divide embed " +
                          std::to_string(c.model.embed));
    if (c.train.epochs == 0) throw ConfigError("train.epochs must be positive");
    if (c.train.batch == 0) throw ConfigError("train.batch must be positive");
    if (!(c.train.adam.lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
    if (!(c.train.adam.beta1 >= 0.0 && c.train.adam.beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
    if (!(c.train.adam.beta2 >= 0.0 && c.train.adam.beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
    if (!(c.train.adam.eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
    if (!(c.train.loss.ce >= 0.0) || !(c.train.loss.dice >= 0.0))
        throw ConfigError("train.loss_ce and train.loss_dice must be non-negative");
    if (c.data.source == DataConfig::Source::Synth) {
        if (c.data.count == 0) throw ConfigError("data.count must be positive");
        try {
            validate(c.data.synth);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("data: ") + e.what());
        }
    } else if (c.data.dir.empty()) {
        throw ConfigError("data.dir is required when data.source = dir");
    }
}

std::vector<BiTemporalSample> load_dataset(const DataConfig& cfg) {
    if (cfg.source == DataConfig::Source::Dir) {
        auto s = load_pair_dir(cfg.dir);
        if (s.empty()) throw DataError("no samples under " + cfg.dir.string());
        return s;
    }
    return synth_generate(cfg.synth, cfg.count);
}

}  // namespace cdx
