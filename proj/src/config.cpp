#include "fpvit/config.hpp"

#include <fstream>
#include <sstream>

#include "fpvit/error.hpp"

namespace fpvit {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str(), path);
}

ConfigFile ConfigFile::parse_text(const std::string& text, const std::string& origin) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ParseError("unterminated section header in " + origin, line_no);
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError("expected key = value in " + origin, line_no);
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ParseError("empty key in " + origin, line_no);
        cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

long ConfigFile::get_int(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stol(it->second);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not an integer: " + it->second);
    }
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not a number: " + it->second);
    }
}

std::uint64_t ConfigFile::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not an unsigned integer: " + it->second);
    }
}

std::string ConfigFile::echo() const {
    std::string out, section;
    for (const auto& [key, value] : values_) {
        std::size_t dot = key.rfind('.');
        std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
        std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
        if (sec != section) {
            if (!out.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += name + " = " + value + "\n";
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::istringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("not a number in list: " + item);
        }
    }
    return out;
}

void RunConfig::apply(const ConfigFile& f) {
    mode = f.get_string("run.mode", mode);
    if (mode != "concat" && mode != "vanilla")
        throw ConfigError("run.mode must be concat or vanilla, got " + mode);
    seed = f.get_u64("run.seed", seed);
    threads = static_cast<int>(f.get_int("run.threads", threads));

    patch_size = static_cast<int>(f.get_int("model.patch_size", patch_size));
    image_side = static_cast<int>(f.get_int("model.image_side", image_side));
    embed_width = static_cast<int>(f.get_int("model.embed_width", embed_width));
    depth = static_cast<int>(f.get_int("model.depth", depth));
    heads = static_cast<int>(f.get_int("model.heads", heads));
    mlp_ratio = f.get_double("model.mlp_ratio", mlp_ratio);
    embedding_dim = static_cast<int>(f.get_int("model.embedding_dim", embedding_dim));

    map_channels = static_cast<int>(f.get_int("map.channels", map_channels));
    map_sigma = f.get_double("map.sigma", map_sigma);

    epochs = static_cast<int>(f.get_int("train.epochs", epochs));
    batch_size = static_cast<int>(f.get_int("train.batch_size", batch_size));
    peak_lr = f.get_double("train.peak_lr", peak_lr);
    warmup_steps = static_cast<int>(f.get_int("train.warmup_steps", warmup_steps));
    weight_decay = f.get_double("train.weight_decay", weight_decay);

    folds = static_cast<int>(f.get_int("protocol.folds", folds));
    enroll_per_finger = static_cast<int>(f.get_int("protocol.enroll_per_finger", enroll_per_finger));
    unmated_fraction = f.get_double("protocol.unmated_fraction", unmated_fraction);
    if (f.has("protocol.far_targets"))
        far_targets = parse_double_list(f.get_string("protocol.far_targets", ""));
}

std::string RunConfig::echo() const {
    std::ostringstream os;
    os << "[run]\nmode = " << mode << "\nseed = " << seed << "\nthreads = " << threads << "\n\n";
    os << "[model]\npatch_size = " << patch_size << "\nimage_side = " << image_side
       << "\nembed_width = " << embed_width << "\ndepth = " << depth << "\nheads = " << heads
       << "\nmlp_ratio = " << mlp_ratio << "\nembedding_dim = " << embedding_dim << "\n\n";
    os << "[map]\nchannels = " << map_channels << "\nsigma = " << map_sigma << "\n\n";
    os << "[train]\nepochs = " << epochs << "\nbatch_size = " << batch_size
       << "\npeak_lr = " << peak_lr << "\nwarmup_steps = " << warmup_steps
       << "\nweight_decay = " << weight_decay << "\n\n";
    os << "[protocol]\nfolds = " << folds << "\nenroll_per_finger = " << enroll_per_finger
       << "\nunmated_fraction = " << unmated_fraction << "\nfar_targets = ";
    for (std::size_t i = 0; i < far_targets.size(); ++i)
        os << (i ? "," : "") << far_targets[i];
    os << "\n";
    return os.str();
}

}  // namespace fpvit
