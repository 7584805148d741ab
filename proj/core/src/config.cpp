#include "glyphdiff/config.hpp"

#include <fstream>

namespace glyphdiff {

void RunConfig::validate() const {
    if (batch < 2 || batch % 2 != 0) throw ConfigError("batch must be even and >= 2");
    if (writers < 2) throw ConfigError("writers must be >= 2");
    if (drop_prob < 0.0f || drop_prob > 1.0f) throw ConfigError("drop_prob must be in [0,1]");
    if (tau <= 0.0f) throw ConfigError("tau must be positive");
    if (sample_steps < 1 || sample_steps > timesteps)
        throw ConfigError("sample_steps must be in [1,timesteps]");
    if (codebook_size < 2) throw ConfigError("codebook_size must be >= 2");
}

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("bad boolean for " + key + ": " + v);
}

}  // namespace

void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    try {
        if (key == "data_dir") cfg.data_dir = value;
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "writers") cfg.writers = std::stoi(value);
        else if (key == "words_per_writer") cfg.words_per_writer = std::stoi(value);
        else if (key == "seen_fraction") cfg.seen_fraction = std::stof(value);
        else if (key == "iv_fraction") cfg.iv_fraction = std::stof(value);
        else if (key == "codebook_size") cfg.codebook_size = std::stoi(value);
        else if (key == "tau") cfg.tau = std::stof(value);
        else if (key == "alpha") cfg.alpha = std::stof(value);
        else if (key == "beta") cfg.beta = std::stof(value);
        else if (key == "use_saq") cfg.use_saq = parse_bool(value, key);
        else if (key == "use_sce") cfg.use_sce = parse_bool(value, key);
        else if (key == "use_pce") cfg.use_pce = parse_bool(value, key);
        else if (key == "timesteps") cfg.timesteps = std::stoi(value);
        else if (key == "guidance_scale") cfg.guidance_scale = std::stof(value);
        else if (key == "drop_prob") cfg.drop_prob = std::stof(value);
        else if (key == "independent_drop") cfg.independent_drop = parse_bool(value, key);
        else if (key == "sample_steps") cfg.sample_steps = std::stoi(value);
        else if (key == "train_steps") cfg.train_steps = std::stoi(value);
        else if (key == "ae_steps") cfg.ae_steps = std::stoi(value);
        else if (key == "batch") cfg.batch = std::stoi(value);
        else if (key == "lr") cfg.lr = std::stof(value);
        else if (key == "ae_lr") cfg.ae_lr = std::stof(value);
        else if (key == "adam_beta1") cfg.adam_beta1 = std::stof(value);
        else if (key == "adam_beta2") cfg.adam_beta2 = std::stof(value);
        else if (key == "weight_decay") cfg.weight_decay = std::stof(value);
        else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoi(value);
        else if (key == "log_every") cfg.log_every = std::stoi(value);
        else throw ConfigError("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
        throw ConfigError("bad value for " + key + ": " + value);
    } catch (const std::out_of_range&) {
        throw ConfigError("value out of range for " + key + ": " + value);
    }
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        const size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const size_t e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        const size_t ke = key.find_last_not_of(" \t");
        key = key.substr(0, ke + 1);
        const size_t vb = value.find_first_not_of(" \t");
        value = vb == std::string::npos ? "" : value.substr(vb);
        apply_config_kv(cfg, key, value);
    }
    return cfg;
}

}  // namespace glyphdiff
