#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fpvit {

// Flat "key = value" text grouped by [section] headers, '#' comments.
// Keys are stored as "section.key". Values set later (command-line flags)
// override file contents; echo() emits the effective configuration for the
// provenance log.
class ConfigFile {
  public:
    ConfigFile() = default;

    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_text(const std::string& text, const std::string& origin = "<text>");

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    std::string echo() const;

  private:
    std::map<std::string, std::string> values_;
};

// Every tunable of the pipeline with its documented default. Parsed from a
// ConfigFile; flags win over file values (the CLI sets fields after load).
struct RunConfig {
    // run
    std::string mode = "concat";  // concat | vanilla
    std::uint64_t seed = 1;
    int threads = 1;

    // model
    int patch_size = 8;
    int image_side = 32;
    int embed_width = 64;
    int depth = 2;
    int heads = 4;
    double mlp_ratio = 4.0;
    int embedding_dim = 32;

    // map
    int map_channels = 2;
    double map_sigma = 1.0;

    // train
    int epochs = 100;
    int batch_size = 32;
    double peak_lr = 2e-3;
    int warmup_steps = 100;
    double weight_decay = 0.01;

    // protocol
    int folds = 5;
    int enroll_per_finger = 2;
    double unmated_fraction = 0.5;
    std::vector<double> far_targets = {0.001, 0.01};

    void apply(const ConfigFile& file);
    std::string echo() const;

    int token_channels() const { return mode == "vanilla" ? 0 : map_channels; }
    int in_dim_per_token() const {
        return patch_size * patch_size * (1 + token_channels());
    }
};

std::vector<double> parse_double_list(const std::string& csv);

}  // namespace fpvit
